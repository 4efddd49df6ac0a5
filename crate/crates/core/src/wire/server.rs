//! Thread-per-connection TCP accept loop shared by the gateway, proxy and synthetic web.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

/// A running listener. Dropping the handle stops accepting new connections.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    /// Blocks until the accept loop exits.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn stop_inner(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

/// Binds `addr` and serves each accepted connection on its own thread.
pub fn spawn<F>(addr: &str, name: &str, handler: F) -> io::Result<ServerHandle>
where
    F: Fn(TcpStream) + Send + Sync + 'static,
{
    let listener = TcpListener::bind(addr)?;
    spawn_on(listener, name, handler)
}

pub fn spawn_on<F>(listener: TcpListener, name: &str, handler: F) -> io::Result<ServerHandle>
where
    F: Fn(TcpStream) + Send + Sync + 'static,
{
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let handler = Arc::new(handler);
    let thread_stop = stop.clone();
    let thread_name = name.to_string();
    let thread = thread::Builder::new().name(format!("{name}-accept")).spawn(move || {
        for conn in listener.incoming() {
            if thread_stop.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let h = handler.clone();
                    let spawned = thread::Builder::new()
                        .name(format!("{thread_name}-conn"))
                        .spawn(move || h(stream));
                    if let Err(e) = spawned {
                        log::error!("{thread_name}: cannot spawn connection thread: {e}");
                    }
                }
                Err(e) => log::warn!("{thread_name}: accept failed: {e}"),
            }
        }
    })?;
    Ok(ServerHandle { addr, stop, thread: Some(thread) })
}
