use std::future::IntoFuture;
use std::io;
use std::net::SocketAddr;
use std::thread::{self, JoinHandle};

use axum::Router;
use cabcompare_core::MeshIndex;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use crate::app::{router, AppState};
use crate::config::ServiceConfig;
use crate::error::ServiceError;

/// A server running on its own thread and runtime, for tests, benchmarks
/// and embedding in synchronous code. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn start(listen: SocketAddr, app: Router) -> io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        let listener = runtime.block_on(TcpListener::bind(listen))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let thread = thread::Builder::new().name("cabcompare-http".into()).spawn(move || {
            runtime.block_on(async move {
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
            })
        })?;
        Ok(ServerHandle { addr, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self, path_and_query: &str) -> String {
        format!("http://{}{}", self.addr, path_and_query)
    }

    pub fn stop(mut self) -> io::Result<()> {
        self.shutdown_and_join()
    }

    fn shutdown_and_join(&mut self) -> io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.shutdown_and_join();
    }
}

/// Binds, answers 503 while the index loads in the background, then serves
/// until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    config.validate()?;
    let state = AppState::from_config(&config)?;
    let app = router(state.clone(), config.cors_origin.as_deref(), config.limits.max_concurrent_requests)?;
    let listener = TcpListener::bind(config.listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");

    let path = config.index_path.clone();
    let loader = tokio::task::spawn_blocking(move || -> Result<(), ServiceError> {
        let index = MeshIndex::load(&path)?;
        tracing::info!(trips = index.len(), cells = index.directory().len(), "index loaded");
        state.install_index(index)
    });

    let server = tokio::spawn(
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
                tracing::info!("shutting down");
            })
            .into_future(),
    );
    match loader.await {
        Ok(Ok(())) => {}
        Ok(Err(e)) => return Err(e),
        Err(e) => return Err(ServiceError::Io(io::Error::other(e))),
    }
    server.await.map_err(io::Error::other)??;
    Ok(())
}
