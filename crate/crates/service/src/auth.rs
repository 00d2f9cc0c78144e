//! Login boundary and signed session tokens.

use hmac::{Hmac, Mac};
use mirror_core::network::{AccountId, MutualGraph};
use mirror_core::SessionId;
use serde::Deserialize;
use sha2::Sha256;
use thiserror::Error;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuthError {
    #[error("missing or malformed credentials")]
    Malformed,
    #[error("token signature does not verify")]
    BadSignature,
    #[error("account `{0}` is not part of the study network")]
    NotInStudy(AccountId),
}

#[derive(Clone, Debug, Deserialize)]
pub struct LoginRequest {
    pub user_id: String,
}

/// Establishes who is starting a session. Swap in an OAuth client here.
pub trait LoginProvider: Send + Sync {
    fn authenticate(&self, request: &LoginRequest) -> Result<AccountId, AuthError>;
}

/// Trusts the supplied id as long as it is a node of the study graph.
pub struct IdLogin {
    population: MutualGraph,
}

impl IdLogin {
    pub fn new(population: MutualGraph) -> Self {
        Self { population }
    }
}

impl LoginProvider for IdLogin {
    fn authenticate(&self, request: &LoginRequest) -> Result<AccountId, AuthError> {
        let id = AccountId::new(request.user_id.trim()).map_err(|_| AuthError::Malformed)?;
        if !self.population.contains(&id) {
            return Err(AuthError::NotInStudy(id));
        }
        Ok(id)
    }
}

/// `<session id>.<hex HMAC-SHA256 of "session:<id>">`.
#[derive(Clone)]
pub struct TokenSigner {
    key: Vec<u8>,
}

impl TokenSigner {
    pub fn new(secret: &[u8]) -> Self {
        Self { key: secret.to_vec() }
    }

    fn mac(&self, session: SessionId) -> HmacSha256 {
        let mut mac = HmacSha256::new_from_slice(&self.key).expect("HMAC accepts keys of any length");
        mac.update(format!("session:{session}").as_bytes());
        mac
    }

    pub fn issue(&self, session: SessionId) -> String {
        format!("{session}.{}", hex::encode(self.mac(session).finalize().into_bytes()))
    }

    pub fn verify(&self, token: &str) -> Result<SessionId, AuthError> {
        let (id, signature) = token.split_once('.').ok_or(AuthError::Malformed)?;
        let session = SessionId(id.parse().map_err(|_| AuthError::Malformed)?);
        let signature = hex::decode(signature).map_err(|_| AuthError::Malformed)?;
        self.mac(session).verify_slice(&signature).map_err(|_| AuthError::BadSignature)?;
        Ok(session)
    }
}
