use axum::extract::FromRequestParts;
use axum::http::request::Parts;
use axum::http::HeaderMap;

use modeladapt_core::policy::ClientContext;

use crate::error::ApiError;
use crate::state::AppState;

pub const CLIENT_ID: &str = "x-client-id";
pub const CLIENT_ROLES: &str = "x-client-roles";

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 128
        && s
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | ':' | '@' | '*'))
}

/// Resolves the caller from a bearer token or the identity headers. No
/// identity at all is the anonymous client.
pub fn resolve(headers: &HeaderMap, state: &AppState) -> Result<ClientContext, ApiError> {
    let text = |name: &str| -> Result<Option<&str>, ApiError> {
        headers
            .get(name)
            .map(|v| {
                v.to_str()
                    .map_err(|_| ApiError::unauthorized(format!("{name} is not valid text")))
            })
            .transpose()
    };
    if let Some(auth) = text("authorization")? {
        let token = auth
            .strip_prefix("Bearer ")
            .ok_or_else(|| ApiError::unauthorized("expected a bearer token"))?;
        return state
            .0
            .tokens
            .get(token.trim())
            .cloned()
            .ok_or_else(|| ApiError::unauthorized("unknown token"));
    }
    let id = text(CLIENT_ID)?.map(str::trim);
    let roles = text(CLIENT_ROLES)?;
    match (id, roles) {
        (None, None) => Ok(ClientContext::anonymous()),
        (None, Some(_)) => Err(ApiError::unauthorized("X-Client-Roles requires X-Client-Id")),
        (Some(id), roles) => {
            if !valid_name(id) {
                return Err(ApiError::unauthorized(format!("malformed client id {id:?}")));
            }
            let roles: Vec<&str> = roles
                .unwrap_or("")
                .split(',')
                .map(str::trim)
                .filter(|r| !r.is_empty())
                .collect();
            if let Some(bad) = roles.iter().find(|r| !valid_name(r)) {
                return Err(ApiError::unauthorized(format!("malformed role {bad:?}")));
            }
            Ok(ClientContext::new(id, roles))
        }
    }
}

/// The requesting client.
pub struct Client(pub ClientContext);

impl FromRequestParts<AppState> for Client {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        resolve(&parts.headers, state).map(Client)
    }
}
