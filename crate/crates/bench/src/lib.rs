//! Shared setup for the benchmarks.

use utcb_core::fixtures::{standalone_kernel, Pki};
use utcb_core::{ApiCall, Kernel, KernelConfig};

/// A fresh kernel plus a request for data from a certified contact.
pub fn kernel_with_request() -> (Kernel, ApiCall) {
    let (pki, kernel) = standalone_kernel(KernelConfig::default(), 1);
    let call = request_from(&pki, "bob");
    (kernel, call)
}

pub fn request_from(pki: &Pki, peer: &str) -> ApiCall {
    ApiCall::RequestData {
        recipient: peer.to_string(),
        recipient_cert: Some(pki.contact(peer, &["friends"]).0.to_bytes()),
    }
}
