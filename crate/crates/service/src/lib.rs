//! HTTP service: identity, role-based model, presentation plans, and data
//! endpoints over one catalog and one database.

use std::net::SocketAddr;

use axum::routing::{delete, get, put};
use axum::Router;
use tower_http::cors::CorsLayer;

pub mod error;
pub mod identity;
pub mod present;
mod routes;
pub mod state;

pub use error::ApiError;
pub use state::{AppState, RequestView, StartupError};

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/model", get(routes::get_model))
        .route("/diagnostics", get(routes::get_diagnostics))
        .route("/plan/{schema}/{table}", get(routes::get_plan))
        .route(
            "/entity/{schema}/{table}",
            get(routes::get_entities)
                .post(routes::post_entities)
                .put(routes::put_entities)
                .delete(routes::delete_entities),
        )
        .route("/attribute/{schema}/{table}", delete(routes::delete_attribute))
        .route("/record/{schema}/{table}/{rid}", get(routes::get_record))
        .route("/facet/{schema}/{table}/{index}/values", get(routes::get_facet_values))
        .route("/picker/{schema}/{constraint}", get(routes::get_picker))
        .route("/assets", put(routes::put_asset))
        .route("/assets/{digest}", get(routes::get_asset))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
