use rapidlabel_core::WorkerId;

/// Maps the opaque token a client presents to a worker id.
///
/// Marketplaces and payment systems plug in here; the service itself only
/// ever sees the resolved id.
pub trait WorkerIdentity: Send + Sync {
    fn resolve(&self, token: &str) -> Option<WorkerId>;
}

/// Uses the token itself as the worker id. Tokens must be 1 to 128
/// characters from `[A-Za-z0-9_.-]`.
#[derive(Debug, Default, Clone, Copy)]
pub struct OpaqueTokens;

impl WorkerIdentity for OpaqueTokens {
    fn resolve(&self, token: &str) -> Option<WorkerId> {
        let ok = (1..=128).contains(&token.len())
            && token
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'));
        ok.then(|| WorkerId::new(token))
    }
}
