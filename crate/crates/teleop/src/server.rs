use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use ildrive_core::sim::Env;
use tokio::net::{TcpListener, TcpStream};
use tokio::time::MissedTickBehavior;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::WebSocketStream;

use crate::protocol::ServerMsg;
use crate::session::{TeleopSession, TICK_HZ};
use crate::Result;

type Socket = WebSocketStream<TcpStream>;

/// A bound listener plus the session it drives.
pub struct TeleopServer {
    listener: TcpListener,
    session: TeleopSession,
}

async fn next_frame(client: &mut Option<Socket>) -> Option<std::result::Result<Message, tokio_tungstenite::tungstenite::Error>> {
    match client {
        Some(ws) => ws.next().await,
        None => std::future::pending().await,
    }
}

async fn send(ws: &mut Socket, msg: &ServerMsg) -> bool {
    ws.send(Message::text(msg.to_json())).await.is_ok()
}

impl TeleopServer {
    pub async fn bind(addr: SocketAddr, session: TeleopSession) -> Result<Self> {
        Ok(Self { listener: TcpListener::bind(addr).await?, session })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Serves one driver at a time until `shutdown` resolves, then returns
    /// the session. A second driver is told so and disconnected.
    pub async fn run(self, shutdown: impl Future<Output = ()>) -> Result<TeleopSession> {
        let Self { listener, mut session } = self;
        let mut ticks = tokio::time::interval(Duration::from_secs(1) / TICK_HZ);
        ticks.set_missed_tick_behavior(MissedTickBehavior::Delay);
        let mut client: Option<Socket> = None;
        tokio::pin!(shutdown);
        loop {
            tokio::select! {
                _ = &mut shutdown => break,
                accepted = listener.accept() => {
                    let (tcp, _) = accepted?;
                    let Ok(mut ws) = tokio_tungstenite::accept_async(tcp).await else { continue };
                    if client.is_some() {
                        send(&mut ws, &ServerMsg::error("another driver is connected")).await;
                        let _ = ws.close(None).await;
                    } else {
                        let hello = session.connect();
                        if send(&mut ws, &hello).await {
                            client = Some(ws);
                        } else {
                            session.disconnect();
                        }
                    }
                }
                frame = next_frame(&mut client) => {
                    let reply = match frame {
                        Some(Ok(Message::Text(text))) => session.handle_message(&text)?,
                        Some(Ok(Message::Binary(_))) => Some(ServerMsg::error("binary frames are not supported")),
                        Some(Ok(Message::Close(_))) | Some(Err(_)) | None => {
                            client = None;
                            session.disconnect();
                            None
                        }
                        Some(Ok(_)) => None,
                    };
                    if let (Some(msg), Some(ws)) = (reply, client.as_mut()) {
                        if !send(ws, &msg).await {
                            client = None;
                            session.disconnect();
                        }
                    }
                }
                _ = ticks.tick() => {
                    let msgs = session.tick()?;
                    if let Some(ws) = client.as_mut() {
                        for m in &msgs {
                            if !send(ws, m).await {
                                client = None;
                                session.disconnect();
                                break;
                            }
                        }
                    }
                }
            }
        }
        if let Some(mut ws) = client {
            let _ = ws.close(None).await;
        }
        Ok(session)
    }
}

/// Serves on `port` (all interfaces) until Ctrl-C, recording to `out`.
pub fn serve(env: Env, port: u16, out: Option<PathBuf>) -> Result<()> {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    rt.block_on(async move {
        let server = TeleopServer::bind(SocketAddr::from(([0, 0, 0, 0], port)), TeleopSession::new(env, out)).await?;
        eprintln!("teleop server listening on ws://{}", server.local_addr()?);
        let session = server
            .run(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        eprintln!("recorded {} transitions", session.recorded_transitions());
        Ok(())
    })
}
