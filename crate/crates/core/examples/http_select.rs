//! Serves the select endpoint on a local port and calls it once.
//!
//! cargo run --example http_select

use std::sync::Arc;

use oats::embed::{embed_corpus, Embedder};
use oats::scenario::catalog_corpus;
use oats::serve::http::{router, AppState};
use oats::serve::{Engine, Method};
use tokio::io::{AsyncReadExt, AsyncWriteExt};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (corpus, spec) = catalog_corpus(384, 7, 1)?;
    let embedder = Embedder::from_spec(&spec)?;
    let table = embed_corpus(&embedder, &corpus.tools)?;
    let engine = Arc::new(Engine::new(corpus.tools, embedder, table)?);

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    let app = router(AppState::ready(engine, Method::Se, 5));
    tokio::spawn(async move { axum::serve(listener, app).await });
    println!("listening on http://{addr}");

    for (method, path, body) in [
        ("POST", "/v1/select", r#"{"query":"convert 100 usd to eur","k":3}"#),
        ("POST", "/v1/select", r#"{"k":3}"#),
        ("GET", "/v1/health", ""),
    ] {
        let mut stream = tokio::net::TcpStream::connect(addr).await?;
        let request = format!(
            "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
        stream.write_all(request.as_bytes()).await?;
        let mut response = String::new();
        stream.read_to_string(&mut response).await?;
        let status = response.lines().next().unwrap_or_default();
        let payload = response.split("\r\n\r\n").nth(1).unwrap_or_default();
        println!("\n{method} {path} {body}\n  {status}\n  {payload}");
    }
    Ok(())
}
