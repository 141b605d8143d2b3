//! Client and server state machines for one synchronous training round.
//!
//! A round is a barrier-synchronized phase: every client computes a local
//! gradient, runs its policy's compensation, compresses, and uploads; the
//! server aggregates in client-id order and broadcasts; every client applies
//! the same aggregate, so all models stay bitwise identical. The ledger
//! meters the bytes of the actual encoded messages.

use serde::{Deserialize, Serialize};

use crate::codec::encode;
use crate::compression::{compress, ClientMemory, CompressionPolicy, PolicyKind};
use crate::error::{Error, Result};
use crate::model::{loss_and_grad, Batch, ModelSpec};
use crate::vector::{sparse_sum_scaled, DenseVector, Mask, SparseVector};

/// One simulated client: model replica, compression memories, and policy.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub client_id: usize,
    pub w: DenseVector,
    pub memory: ClientMemory,
    pub policy: CompressionPolicy,
}

impl ClientState {
    pub fn new(client_id: usize, w: DenseVector, policy: CompressionPolicy) -> Self {
        let dim = w.dim();
        ClientState {
            client_id,
            w,
            memory: ClientMemory::zeros(dim),
            policy,
        }
    }
}

/// Server-side state. The momentum vector stays zero for every policy except
/// the server-side global momentum one.
#[derive(Clone, Debug)]
pub struct ServerState {
    pub global_momentum: DenseVector,
    pub beta: f64,
    pub round: usize,
}

impl ServerState {
    pub fn new(dim: usize, beta: f64) -> Self {
        ServerState {
            global_momentum: DenseVector::zeros(dim),
            beta,
            round: 0,
        }
    }
}

/// What one client sends up plus its updated state.
#[derive(Clone, Debug)]
pub struct ClientRoundOutput {
    pub message: SparseVector,
    pub state: ClientState,
    pub mask: Mask,
    pub train_loss: f64,
}

/// Executes one client round: local gradient, policy-specific compensation,
/// global-momentum accumulation (fusion policy only), and compression.
///
/// The model `w` is not touched here; the update happens after the broadcast
/// in [`apply_global_update`]. `g_hat_prev` is the previous round's aggregate
/// (empty at round 0) and `tau` the fusion ratio scheduled for this round.
pub fn client_round(
    state: &ClientState,
    model: &ModelSpec,
    batch: &Batch,
    g_hat_prev: &SparseVector,
    tau: f64,
) -> Result<ClientRoundOutput> {
    let (train_loss, grad) = loss_and_grad(model, &state.w, batch)?;
    let mem = &state.memory;
    let compensated = match state.policy.kind {
        PolicyKind::TopK => mem.accumulate_residual(&grad)?,
        PolicyKind::Dgc | PolicyKind::DgcWgm | PolicyKind::DgcWgmf => {
            mem.momentum_correction(&grad, state.policy.alpha())?
        }
        PolicyKind::Gmc => mem.gmc_compensate(&grad, g_hat_prev, state.policy.beta())?,
    };
    let compensated = if state.policy.kind == PolicyKind::DgcWgmf {
        compensated.accumulate_global_momentum(g_hat_prev, state.policy.beta())?
    } else {
        compensated
    };
    let policy = state.policy.with_tau(tau)?;
    let out = compress(&compensated, &policy)?;
    Ok(ClientRoundOutput {
        message: out.message,
        state: ClientState {
            client_id: state.client_id,
            w: state.w.clone(),
            memory: out.memory,
            policy: state.policy,
        },
        mask: out.mask,
        train_loss,
    })
}

/// Averages the uploaded gradients (in client order). Under the server-side
/// global momentum policy the broadcast is the momentum vector itself, whose
/// support only ever grows; for every other policy it is the plain average.
pub fn server_aggregate(
    gs: &[SparseVector],
    server: &ServerState,
    policy_kind: PolicyKind,
) -> Result<(SparseVector, ServerState)> {
    let base = sparse_sum_scaled(gs, 1.0 / gs.len() as f64)?;
    let mut next = server.clone();
    next.round += 1;
    let g_hat = if policy_kind == PolicyKind::DgcWgm {
        next.global_momentum = server
            .global_momentum
            .scaled(server.beta)?
            .add(&base.densify())?;
        SparseVector::from_dense(&next.global_momentum)
    } else {
        base
    };
    Ok((g_hat, next))
}

/// `w' = w - eta * densify(g_hat)`.
pub fn apply_global_update(
    w: &DenseVector,
    g_hat: &SparseVector,
    eta: f64,
) -> Result<DenseVector> {
    if w.dim() != g_hat.dim() {
        return Err(Error::DimMismatch {
            expected: w.dim(),
            got: g_hat.dim(),
        });
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive and finite, got {eta}"
        )));
    }
    let mut values = w.values().to_vec();
    for &(i, g) in g_hat.entries() {
        values[i as usize] -= eta * g;
    }
    DenseVector::from_vec(values)
}

/// How broadcast traffic is charged: once per client (hub-and-spoke unicast)
/// or once in total (multicast).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownloadAccounting {
    #[default]
    PerClient,
    Multicast,
}

/// Byte and entry counts for one round. `upload_bytes` and `download_bytes`
/// hold one entry per message actually transmitted, so their sums are the
/// metered traffic (under multicast accounting the broadcast appears once).
#[derive(Clone, Debug, PartialEq)]
pub struct RoundLedger {
    pub round: usize,
    pub upload_bytes: Vec<u64>,
    pub download_bytes: Vec<u64>,
    pub upload_nnz: u64,
    pub download_nnz: u64,
    pub broadcast_nnz: usize,
    pub mean_mask_jaccard: f64,
}

impl RoundLedger {
    pub fn upload_total(&self) -> u64 {
        self.upload_bytes.iter().sum()
    }

    pub fn download_total(&self) -> u64 {
        self.download_bytes.iter().sum()
    }
}

/// Encodes every message of the round and meters it.
pub fn record_round(
    round: usize,
    gs: &[SparseVector],
    g_hat: &SparseVector,
    masks: &[Mask],
    accounting: DownloadAccounting,
) -> RoundLedger {
    let upload_bytes: Vec<u64> = gs.iter().map(|g| encode(g).len() as u64).collect();
    let upload_nnz: u64 = gs.iter().map(|g| g.nnz() as u64).sum();
    let broadcast_len = encode(g_hat).len() as u64;
    let broadcast_nnz = g_hat.nnz();
    let downloads = match accounting {
        DownloadAccounting::PerClient => gs.len(),
        DownloadAccounting::Multicast => 1,
    };
    RoundLedger {
        round,
        upload_bytes,
        download_bytes: vec![broadcast_len; downloads],
        upload_nnz,
        download_nnz: broadcast_nnz as u64 * downloads as u64,
        broadcast_nnz,
        mean_mask_jaccard: mean_pairwise_jaccard(masks),
    }
}

/// Mean Jaccard overlap over unordered mask pairs; 1.0 for a single client.
fn mean_pairwise_jaccard(masks: &[Mask]) -> f64 {
    if masks.len() < 2 {
        return 1.0;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            total += masks[i].jaccard(&masks[j]);
            pairs += 1;
        }
    }
    total / pairs as f64
}
