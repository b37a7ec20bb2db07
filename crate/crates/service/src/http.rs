//! axum transport: every request is forwarded to [`Service::handle`].

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response as HttpResponse};
use axum::Router;
use tokio::net::TcpListener;

use crate::api::Service;

pub fn router(service: Arc<Service>) -> Router {
    Router::new().fallback(dispatch).with_state(service)
}

async fn dispatch(State(service): State<Arc<Service>>, method: Method, uri: Uri, body: Bytes) -> HttpResponse {
    let target = uri.path_and_query().map_or_else(|| uri.path().to_owned(), |pq| pq.as_str().to_owned());
    let result = tokio::task::spawn_blocking(move || service.handle(method.as_str(), &target, &body)).await;
    match result {
        Ok(resp) => {
            let status = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (status, [(header::CONTENT_TYPE, resp.content_type)], resp.body).into_response()
        }
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, format!("handler failed: {e}")).into_response(),
    }
}

/// Binds `addr` and serves until the process ends. Returns the bound address through `on_bind`.
pub async fn serve(service: Arc<Service>, addr: SocketAddr, on_bind: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    on_bind(listener.local_addr()?);
    axum::serve(listener, router(service)).await
}
