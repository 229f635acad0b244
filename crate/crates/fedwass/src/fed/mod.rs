//! Round-based client/server simulator: interpolating-measure exchange,
//! midpoint updates of the shared measures, optional barycenter learning,
//! distance accounting, and an auditable message transcript.
//!
//! Per round, each client contributes exactly three protocol messages:
//! a distance report, the server's interpolating-measure share back to the
//! client, and the client's updated shared measure. Private support matrices
//! never appear in any payload; [`audit_transcript`] enforces this by an
//! exact row-membership scan.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{input_err, Error, Result};
use crate::geodesics::{barycentric_projection, geodesic_midpoint, interpolate};
use crate::measure::DiscreteMeasure;
use crate::ot::{wasserstein, Backend};

/// Whether the server holds a fixed validation measure or learns the target
/// as the clients' barycenter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fixed,
    Barycenter,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FedConfig {
    pub num_clients: usize,
    /// Maximum number of rounds K.
    pub rounds: usize,
    /// Atom count S of every shared measure.
    pub support_size: usize,
    /// Geodesic coordinate of the interpolating measures, in (0,1).
    pub t: f64,
    /// Ground-cost exponent p.
    pub power: f64,
    pub backend: Backend,
    /// Barycenter weights; `None` means uniform.
    pub lambda: Option<Vec<f64>>,
    pub mode: Mode,
    /// Early stop when the relative change of the monitored sum stays below
    /// this for three consecutive rounds.
    pub stop_tol: f64,
    pub seed: u64,
    /// Run per-client work of each phase on a thread pool.
    pub parallel: bool,
    /// Fixed-point iterations inside each barycenter update.
    pub barycenter_inner_steps: usize,
}

impl FedConfig {
    pub fn new(num_clients: usize, mode: Mode) -> Self {
        Self {
            num_clients,
            rounds: 10,
            support_size: 100,
            t: 0.5,
            power: 2.0,
            backend: Backend::Exact,
            lambda: None,
            mode,
            stop_tol: 1e-4,
            seed: 0,
            parallel: false,
            barycenter_inner_steps: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return input_err("config: need at least one client");
        }
        if self.rounds == 0 || self.support_size == 0 {
            return input_err("config: rounds and support_size must be >= 1");
        }
        if !self.t.is_finite() || self.t <= 0.0 || self.t >= 1.0 {
            return input_err("config: t must lie strictly inside (0,1)");
        }
        if !self.power.is_finite() || self.power < 1.0 {
            return input_err("config: power must be >= 1");
        }
        if self.stop_tol < 0.0 {
            return input_err("config: stop tolerance must be >= 0");
        }
        if self.barycenter_inner_steps == 0 {
            return input_err("config: barycenter_inner_steps must be >= 1");
        }
        if let Some(lambda) = &self.lambda {
            if lambda.len() != self.num_clients {
                return input_err("config: lambda length must equal num_clients");
            }
            if lambda.iter().any(|&l| l < 0.0 || !l.is_finite()) {
                return input_err("config: lambda entries must be finite and >= 0");
            }
            if (lambda.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return input_err("config: lambda must sum to 1");
            }
        }
        Ok(())
    }

    fn lambda_vec(&self) -> Vec<f64> {
        self.lambda
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.num_clients as f64; self.num_clients])
    }
}

/// One protocol message. Measure payloads are carried whole; `digest` is a
/// SHA-256 of the canonical JSON body so transcripts can be audited offline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Message {
    pub round: usize,
    pub phase: u8,
    pub digest: String,
    pub body: MessageBody,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MessageBody {
    /// Client -> server: the split distance to the current shared measure.
    ClientDistance { client_id: usize, distance: f64 },
    /// Client -> server: the freshly updated shared measure.
    GammaShare {
        client_id: usize,
        gamma: DiscreteMeasure,
    },
    /// Server -> client: the server-side interpolating measure.
    EtaQShare {
        client_id: usize,
        eta_q: DiscreteMeasure,
    },
    /// Synchronization marker; not emitted by [`FedSession::run`].
    RoundControl { note: String },
}

impl MessageBody {
    pub fn kind(&self) -> &'static str {
        match self {
            MessageBody::ClientDistance { .. } => "client_distance",
            MessageBody::GammaShare { .. } => "gamma_share",
            MessageBody::EtaQShare { .. } => "eta_q_share",
            MessageBody::RoundControl { .. } => "round_control",
        }
    }
}

impl Message {
    pub fn new(round: usize, phase: u8, body: MessageBody) -> Self {
        let bytes = serde_json::to_vec(&body).expect("message body serializes");
        let hash = Sha256::digest(&bytes);
        let digest = hash.iter().map(|b| format!("{b:02x}")).collect();
        Self {
            round,
            phase,
            digest,
            body,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    /// Private measure; never placed in a message payload.
    pub data: DiscreteMeasure,
    pub gamma: DiscreteMeasure,
    pub eta_p: Option<DiscreteMeasure>,
    /// W(data, eta_p) from the latest round.
    pub d_data_eta: f64,
    /// W(eta_p, gamma) from the latest round.
    pub d_eta_gamma: f64,
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub q: DiscreteMeasure,
    pub eta_q: Vec<Option<DiscreteMeasure>>,
    /// Latest four-term distance estimate per client.
    pub estimates: Vec<f64>,
}

#[derive(Debug)]
pub struct FedSession {
    pub config: FedConfig,
    pub clients: Vec<ClientState>,
    pub server: ServerState,
    pub transcript: Vec<Message>,
    /// Monitored sum per round, index 0 = initial state.
    pub a_history: Vec<f64>,
    /// Per-round, per-client four-term estimates.
    pub estimate_history: Vec<Vec<f64>>,
    pub rounds_run: usize,
}

/// Builds the initial session state. Shared measures start as seeded
/// standard-normal clouds scaled by a coarse coordinate-range hint — the only
/// scalar derived from the data that initialization shares.
pub fn init_session(
    datasets: Vec<DiscreteMeasure>,
    validation: Option<DiscreteMeasure>,
    config: FedConfig,
) -> Result<FedSession> {
    config.validate()?;
    if datasets.len() != config.num_clients {
        return input_err("init_session: dataset count must equal num_clients");
    }
    let dim = datasets[0].dim();
    if datasets.iter().any(|d| d.dim() != dim) {
        return input_err("init_session: all client dimensions must agree");
    }
    match (config.mode, &validation) {
        (Mode::Fixed, None) => {
            return input_err("init_session: fixed mode requires a validation measure")
        }
        (Mode::Barycenter, Some(_)) => {
            return input_err("init_session: barycenter mode takes no validation measure")
        }
        _ => {}
    }
    if let Some(v) = &validation {
        if v.dim() != dim {
            return input_err("init_session: validation dimension mismatch");
        }
    }

    let mut hint = 0.0f64;
    for d in datasets.iter().chain(validation.iter()) {
        for &x in d.support().iter() {
            hint = hint.max(x.abs());
        }
    }
    if hint == 0.0 {
        hint = 1.0;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut draw_cloud = |s: usize| -> Result<DiscreteMeasure> {
        let support = Array2::from_shape_fn((s, dim), |_| {
            hint * rng.sample::<f64, _>(StandardNormal)
        });
        DiscreteMeasure::uniform(support)
    };

    let mut clients = Vec::with_capacity(datasets.len());
    for (id, data) in datasets.into_iter().enumerate() {
        let gamma = draw_cloud(config.support_size)?;
        clients.push(ClientState {
            id,
            data,
            gamma,
            eta_p: None,
            d_data_eta: 0.0,
            d_eta_gamma: 0.0,
        });
    }
    let q = match validation {
        Some(v) => v,
        None => draw_cloud(config.support_size)?,
    };
    let n = clients.len();
    Ok(FedSession {
        config,
        clients,
        server: ServerState {
            q,
            eta_q: vec![None; n],
            estimates: vec![f64::NAN; n],
        },
        transcript: Vec::new(),
        a_history: Vec::new(),
        estimate_history: Vec::new(),
        rounds_run: 0,
    })
}

/// One side of the geodesic split: the interpolating measure at `t` between
/// `from` and `gamma`, plus the two summand distances whose sum equals
/// W(from, gamma) up to finite-support slack.
pub fn split_distance(
    from: &DiscreteMeasure,
    gamma: &DiscreteMeasure,
    t: f64,
    power: f64,
    backend: Backend,
) -> Result<(DiscreteMeasure, f64, f64)> {
    let eta = interpolate(from, gamma, t, power, backend)?;
    let d_from = wasserstein(from, &eta, power, backend)?.distance;
    let d_gamma = wasserstein(&eta, gamma, power, backend)?.distance;
    Ok((eta, d_from, d_gamma))
}

/// Client phase of a round: interpolate toward the shared measure, record the
/// split distances, emit the distance report.
pub fn client_round(
    state: &mut ClientState,
    t: f64,
    power: f64,
    backend: Backend,
) -> Result<(DiscreteMeasure, f64)> {
    let (eta, d1, d2) = split_distance(&state.data, &state.gamma, t, power, backend)
        .map_err(|e| tag_client(state.id, e))?;
    state.eta_p = Some(eta.clone());
    state.d_data_eta = d1;
    state.d_eta_gamma = d2;
    Ok((eta, d1 + d2))
}

/// Server phase for one client: interpolate the target toward that client's
/// shared measure and record the split distances.
pub fn server_round(
    server: &mut ServerState,
    client_id: usize,
    gamma: &DiscreteMeasure,
    t: f64,
    power: f64,
    backend: Backend,
) -> Result<(DiscreteMeasure, f64, f64)> {
    let (eta, d3, d4) = split_distance(&server.q, gamma, t, power, backend)
        .map_err(|e| tag_client(client_id, e))?;
    server.eta_q[client_id] = Some(eta.clone());
    Ok((eta, d3, d4))
}

/// The two-term argmin update: the geodesic midpoint of the two interpolating
/// measures.
pub fn gamma_update(
    eta_p: &DiscreteMeasure,
    eta_q: &DiscreteMeasure,
    power: f64,
    backend: Backend,
) -> Result<DiscreteMeasure> {
    geodesic_midpoint(eta_p, eta_q, power, backend)
}

/// Resamples a measure to exactly `s` atoms with uniform weights. With
/// `s == len` and uniform input weights this is the identity. Otherwise atoms
/// are drawn seeded: without replacement when shrinking, weight-proportional
/// with replacement when growing.
pub fn resample_support(measure: &DiscreteMeasure, s: usize, seed: u64) -> Result<DiscreteMeasure> {
    let m = measure.len();
    if s == 0 {
        return input_err("resample_support: target size must be >= 1");
    }
    let uniform_in = measure
        .weights()
        .iter()
        .all(|&w| (w - 1.0 / m as f64).abs() <= 1e-12);
    if s == m && uniform_in {
        return Ok(measure.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices: Vec<usize> = if s <= m {
        let mut all: Vec<usize> = (0..m).collect();
        all.shuffle(&mut rng);
        let mut picked = all[..s].to_vec();
        picked.sort_unstable();
        picked
    } else {
        let cumulative: Vec<f64> = measure
            .weights()
            .iter()
            .scan(0.0, |acc, &w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        (0..s)
            .map(|_| {
                let u: f64 = rng.gen();
                cumulative.partition_point(|&c| c < u).min(m - 1)
            })
            .collect()
    };
    let support = Array2::from_shape_fn((s, measure.dim()), |(i, j)| {
        measure.support()[[indices[i], j]]
    });
    DiscreteMeasure::uniform(support)
}

/// One free-support fixed-point step: each target atom moves to the
/// λ-weighted mean of its barycentric projections onto every measure.
pub fn barycenter_step(
    q: &DiscreteMeasure,
    measures: &[&DiscreteMeasure],
    lambda: &[f64],
    power: f64,
    backend: Backend,
) -> Result<Array2<f64>> {
    if measures.is_empty() || measures.len() != lambda.len() {
        return input_err("barycenter_step: need one weight per measure");
    }
    let mut next = Array2::<f64>::zeros((q.len(), q.dim()));
    for (nu, &l) in measures.iter().zip(lambda) {
        let sol = wasserstein(q, nu, power, backend)?;
        let proj = barycentric_projection(&sol.plan, nu.support())?;
        next.scaled_add(l, &proj);
    }
    Ok(next)
}

/// Iterated fixed-point barycenter with free support, starting from `init`.
/// The same rule drives the server update and any data-access oracle.
pub fn free_support_barycenter(
    init: &DiscreteMeasure,
    measures: &[&DiscreteMeasure],
    lambda: &[f64],
    power: f64,
    backend: Backend,
    steps: usize,
) -> Result<DiscreteMeasure> {
    let mut q = init.clone();
    for _ in 0..steps {
        let support = barycenter_step(&q, measures, lambda, power, backend)?;
        q = DiscreteMeasure::new(support, q.weights().to_owned())?;
    }
    Ok(q)
}

impl FedSession {
    /// The monitored sum: Σ_i [W(data_i, γ_i) + W(q, γ_i)], computed by
    /// direct solves for diagnostics only — it rides on no message.
    pub fn monitor(&self) -> Result<f64> {
        let cfg = &self.config;
        let per_client = |c: &ClientState| -> Result<f64> {
            let a = wasserstein(&c.data, &c.gamma, cfg.power, cfg.backend)?.distance;
            let b = wasserstein(&self.server.q, &c.gamma, cfg.power, cfg.backend)?.distance;
            Ok(a + b)
        };
        let terms: Result<Vec<f64>> = if cfg.parallel {
            self.clients.par_iter().map(per_client).collect()
        } else {
            self.clients.iter().map(per_client).collect()
        };
        Ok(terms?.iter().sum())
    }

    /// Executes up to K rounds, stopping early once the relative change of
    /// the monitored sum stays below the tolerance for three consecutive
    /// rounds. On failure the partial history is preserved in `self`.
    pub fn run(&mut self) -> Result<()> {
        let cfg = self.config.clone();
        let lambda = cfg.lambda_vec();
        if self.a_history.is_empty() {
            let a0 = self.monitor()?;
            self.a_history.push(a0);
        }
        let mut calm_rounds = 0usize;
        for round in (self.rounds_run + 1)..=cfg.rounds {
            // clients report split distances to the current shared measures
            let reports: Result<Vec<(DiscreteMeasure, f64)>> = if cfg.parallel {
                self.clients
                    .par_iter_mut()
                    .map(|c| client_round(c, cfg.t, cfg.power, cfg.backend))
                    .collect()
            } else {
                self.clients
                    .iter_mut()
                    .map(|c| client_round(c, cfg.t, cfg.power, cfg.backend))
                    .collect()
            };
            let reports = reports?;
            for (c, (_, total)) in self.clients.iter().zip(&reports) {
                self.transcript.push(Message::new(
                    round,
                    1,
                    MessageBody::ClientDistance {
                        client_id: c.id,
                        distance: *total,
                    },
                ));
            }

            // server interpolates the target toward each shared measure
            let q = self.server.q.clone();
            let shares: Result<Vec<(DiscreteMeasure, f64, f64)>> = if cfg.parallel {
                self.clients
                    .par_iter()
                    .map(|c| split_distance(&q, &c.gamma, cfg.t, cfg.power, cfg.backend)
                        .map_err(|e| tag_client(c.id, e)))
                    .collect()
            } else {
                self.clients
                    .iter()
                    .map(|c| split_distance(&q, &c.gamma, cfg.t, cfg.power, cfg.backend)
                        .map_err(|e| tag_client(c.id, e)))
                    .collect()
            };
            let shares = shares?;
            let mut round_estimates = Vec::with_capacity(self.clients.len());
            for (i, (eta_q, d3, d4)) in shares.iter().enumerate() {
                self.server.eta_q[i] = Some(eta_q.clone());
                let estimate = self.clients[i].d_data_eta + self.clients[i].d_eta_gamma + d4 + d3;
                self.server.estimates[i] = estimate;
                round_estimates.push(estimate);
                self.transcript.push(Message::new(
                    round,
                    2,
                    MessageBody::EtaQShare {
                        client_id: i,
                        eta_q: eta_q.clone(),
                    },
                ));
            }
            self.estimate_history.push(round_estimates);

            // clients move their shared measures to the geodesic midpoint
            let seed = cfg.seed;
            let updates: Result<Vec<DiscreteMeasure>> = if cfg.parallel {
                self.clients
                    .par_iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let eta_p = c.eta_p.as_ref().expect("client phase ran");
                        let eta_q = self.server.eta_q[i].as_ref().expect("server phase ran");
                        let mid = gamma_update(eta_p, eta_q, cfg.power, cfg.backend)
                            .map_err(|e| tag_client(i, e))?;
                        resample_support(&mid, cfg.support_size, derive_seed(seed, round, i))
                    })
                    .collect()
            } else {
                self.clients
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let eta_p = c.eta_p.as_ref().expect("client phase ran");
                        let eta_q = self.server.eta_q[i].as_ref().expect("server phase ran");
                        let mid = gamma_update(eta_p, eta_q, cfg.power, cfg.backend)
                            .map_err(|e| tag_client(i, e))?;
                        resample_support(&mid, cfg.support_size, derive_seed(seed, round, i))
                    })
                    .collect()
            };
            for (c, gamma) in self.clients.iter_mut().zip(updates?) {
                self.transcript.push(Message::new(
                    round,
                    3,
                    MessageBody::GammaShare {
                        client_id: c.id,
                        gamma: gamma.clone(),
                    },
                ));
                c.gamma = gamma;
            }

            // server refreshes the learned target from the new shared measures
            if cfg.mode == Mode::Barycenter {
                let gammas: Vec<&DiscreteMeasure> =
                    self.clients.iter().map(|c| &c.gamma).collect();
                self.server.q = free_support_barycenter(
                    &self.server.q,
                    &gammas,
                    &lambda,
                    cfg.power,
                    cfg.backend,
                    cfg.barycenter_inner_steps,
                )?;
            }

            self.rounds_run = round;
            let a = self.monitor()?;
            let prev = *self.a_history.last().unwrap();
            self.a_history.push(a);
            let rel = (a - prev).abs() / prev.abs().max(1e-300);
            if rel < cfg.stop_tol {
                calm_rounds += 1;
                if calm_rounds >= 3 {
                    break;
                }
            } else {
                calm_rounds = 0;
            }
        }
        Ok(())
    }

    /// Writes the transcript as line-delimited JSON, one message per line.
    pub fn write_transcript(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for msg in &self.transcript {
            serde_json::to_writer(&mut file, msg)?;
            file.write_all(b"\n")?;
        }
        file.flush()?;
        Ok(())
    }
}

pub fn read_transcript(path: &Path) -> Result<Vec<Message>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

fn tag_client(id: usize, e: Error) -> Error {
    match e {
        Error::SolverFailure(msg) => Error::SolverFailure(format!("client {id}: {msg}")),
        other => other,
    }
}

fn derive_seed(base: u64, round: usize, client: usize) -> u64 {
    base.wrapping_add((round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((client as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditViolation {
    pub message_index: usize,
    pub dataset_index: usize,
    pub dataset_row: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub messages: usize,
    pub counts: BTreeMap<String, usize>,
    pub violations: Vec<AuditViolation>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Scans every measure payload in the transcript for exact (bitwise) matches
/// against rows of the given private matrices.
pub fn audit_transcript(messages: &[Message], private: &[Array2<f64>]) -> AuditReport {
    let mut rows: HashMap<Vec<u64>, (usize, usize)> = HashMap::new();
    for (di, matrix) in private.iter().enumerate() {
        for (ri, row) in matrix.rows().into_iter().enumerate() {
            let key: Vec<u64> = row.iter().map(|x| x.to_bits()).collect();
            rows.entry(key).or_insert((di, ri));
        }
    }
    let mut counts = BTreeMap::new();
    let mut violations = Vec::new();
    for (mi, msg) in messages.iter().enumerate() {
        *counts.entry(msg.body.kind().to_string()).or_insert(0) += 1;
        let payload = match &msg.body {
            MessageBody::GammaShare { gamma, .. } => Some(gamma),
            MessageBody::EtaQShare { eta_q, .. } => Some(eta_q),
            _ => None,
        };
        if let Some(measure) = payload {
            for row in measure.support().rows() {
                let key: Vec<u64> = row.iter().map(|x| x.to_bits()).collect();
                if let Some(&(di, ri)) = rows.get(&key) {
                    violations.push(AuditViolation {
                        message_index: mi,
                        dataset_index: di,
                        dataset_row: ri,
                    });
                }
            }
        }
    }
    AuditReport {
        messages: messages.len(),
        counts,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_measure(n: usize, dim: usize, seed: u64) -> DiscreteMeasure {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let support = Array2::from_shape_fn((n, dim), |_| rng.gen_range(-1.0..1.0));
        DiscreteMeasure::uniform(support).unwrap()
    }

    fn config(n: usize, mode: Mode) -> FedConfig {
        let mut cfg = FedConfig::new(n, mode);
        cfg.support_size = 20;
        cfg.rounds = 5;
        cfg
    }

    #[test]
    fn init_fixed_mode_uses_validation() {
        let data = vec![random_measure(20, 2, 1)];
        let val = random_measure(15, 2, 2);
        let session = init_session(data, Some(val.clone()), config(1, Mode::Fixed)).unwrap();
        assert_eq!(session.server.q, val);
        assert_eq!(session.clients[0].gamma.len(), 20);
        assert!(session.clients[0].gamma.weights().iter().all(|&w| (w - 0.05).abs() < 1e-15));
    }

    #[test]
    fn init_deterministic_under_seed() {
        let make = || {
            init_session(
                vec![random_measure(10, 3, 5), random_measure(12, 3, 6)],
                None,
                config(2, Mode::Barycenter),
            )
            .unwrap()
        };
        let (a, b) = (make(), make());
        for (ca, cb) in a.clients.iter().zip(&b.clients) {
            assert_eq!(ca.gamma, cb.gamma);
        }
        assert_eq!(a.server.q, b.server.q);
    }

    #[test]
    fn init_rejects_mode_mismatch() {
        let data = vec![random_measure(10, 2, 1)];
        assert!(init_session(data.clone(), None, config(1, Mode::Fixed)).is_err());
        let val = random_measure(10, 2, 2);
        assert!(init_session(data, Some(val), config(1, Mode::Barycenter)).is_err());
    }

    #[test]
    fn client_round_self_distance_vanishes() {
        let data = random_measure(15, 2, 3);
        let mut state = ClientState {
            id: 0,
            data: data.clone(),
            gamma: data,
            eta_p: None,
            d_data_eta: 1.0,
            d_eta_gamma: 1.0,
        };
        let (_, total) = client_round(&mut state, 0.5, 2.0, Backend::Exact).unwrap();
        assert!(total <= 1e-6, "self distance {total}");
    }

    #[test]
    fn client_round_dirac_midpoint() {
        let mut state = ClientState {
            id: 0,
            data: DiscreteMeasure::dirac(&[0.0]).unwrap(),
            gamma: DiscreteMeasure::dirac(&[2.0]).unwrap(),
            eta_p: None,
            d_data_eta: 0.0,
            d_eta_gamma: 0.0,
        };
        let (eta, total) = client_round(&mut state, 0.5, 2.0, Backend::Exact).unwrap();
        assert!((eta.support()[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((total - 2.0).abs() < 1e-9);
    }

    #[test]
    fn split_sum_matches_direct_distance() {
        let p = random_measure(40, 2, 7);
        let gamma = random_measure(40, 2, 8);
        let (_, d1, d2) = split_distance(&p, &gamma, 0.5, 2.0, Backend::Exact).unwrap();
        let direct = wasserstein(&p, &gamma, 2.0, Backend::Exact).unwrap().distance;
        assert!((d1 + d2 - direct).abs() <= 1e-4 * direct.max(1e-12));
        assert!(d1 + d2 >= direct - 1e-9);
    }

    #[test]
    fn gamma_update_fixed_point_and_diracs() {
        let mu = random_measure(10, 2, 9);
        let g = gamma_update(&mu, &mu, 2.0, Backend::Exact).unwrap();
        let obj = wasserstein(&mu, &g, 2.0, Backend::Exact).unwrap().distance
            + wasserstein(&g, &mu, 2.0, Backend::Exact).unwrap().distance;
        assert!(obj <= 1e-9);

        let a = DiscreteMeasure::dirac(&[0.0]).unwrap();
        let b = DiscreteMeasure::dirac(&[4.0]).unwrap();
        let mid = gamma_update(&a, &b, 2.0, Backend::Exact).unwrap();
        assert!((mid.support()[[0, 0]] - 2.0).abs() < 1e-12);
        let obj = wasserstein(&a, &mid, 2.0, Backend::Exact).unwrap().distance
            + wasserstein(&mid, &b, 2.0, Backend::Exact).unwrap().distance;
        assert!((obj - 4.0).abs() < 1e-9);
    }

    #[test]
    fn gamma_update_objective_matches_endpoint_distance() {
        let a = random_measure(30, 2, 11);
        let b = random_measure(30, 2, 12);
        let mid = gamma_update(&a, &b, 2.0, Backend::Exact).unwrap();
        let w = wasserstein(&a, &b, 2.0, Backend::Exact).unwrap().distance;
        let obj = wasserstein(&a, &mid, 2.0, Backend::Exact).unwrap().distance
            + wasserstein(&mid, &b, 2.0, Backend::Exact).unwrap().distance;
        assert!((obj - w).abs() <= 1e-4 * w, "obj {obj} vs w {w}");
    }

    #[test]
    fn barycenter_fixed_point_identity() {
        let q = random_measure(12, 2, 13);
        let next = barycenter_step(&q, &[&q, &q], &[0.5, 0.5], 2.0, Backend::Exact).unwrap();
        for (a, b) in next.iter().zip(q.support().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn barycenter_of_diracs_moves_to_mean() {
        let q = DiscreteMeasure::dirac(&[7.0]).unwrap();
        let a = DiscreteMeasure::dirac(&[0.0]).unwrap();
        let b = DiscreteMeasure::dirac(&[2.0]).unwrap();
        let next = barycenter_step(&q, &[&a, &b], &[0.5, 0.5], 2.0, Backend::Exact).unwrap();
        assert!((next[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn resample_identity_when_sizes_match() {
        let mu = random_measure(20, 2, 14);
        let out = resample_support(&mu, 20, 99).unwrap();
        assert_eq!(out, mu);
        let shrunk = resample_support(&mu, 8, 99).unwrap();
        assert_eq!(shrunk.len(), 8);
        let grown = resample_support(&mu, 30, 99).unwrap();
        assert_eq!(grown.len(), 30);
    }

    #[test]
    fn run_self_distance_converges() {
        let data = random_measure(12, 2, 15);
        let mut cfg = config(1, Mode::Fixed);
        cfg.support_size = 12;
        cfg.rounds = 15;
        cfg.stop_tol = 0.0;
        let mut session = init_session(vec![data.clone()], Some(data), cfg).unwrap();
        session.run().unwrap();
        let last = session.estimate_history.last().unwrap()[0];
        assert!(last <= 1e-3, "final estimate {last}");
    }

    #[test]
    fn message_count_law_and_determinism() {
        let datasets = || vec![random_measure(15, 2, 16), random_measure(15, 2, 17)];
        let mut cfg = config(2, Mode::Barycenter);
        cfg.rounds = 3;
        cfg.stop_tol = 0.0;
        let mut s1 = init_session(datasets(), None, cfg.clone()).unwrap();
        s1.run().unwrap();
        assert_eq!(s1.transcript.len(), 3 * 2 * 3);
        for round in 1..=3usize {
            for kind in ["client_distance", "eta_q_share", "gamma_share"] {
                let count = s1
                    .transcript
                    .iter()
                    .filter(|m| m.round == round && m.body.kind() == kind)
                    .count();
                assert_eq!(count, 2, "round {round} kind {kind}");
            }
        }
        let mut s2 = init_session(datasets(), None, cfg).unwrap();
        s2.run().unwrap();
        let d1: Vec<&String> = s1.transcript.iter().map(|m| &m.digest).collect();
        let d2: Vec<&String> = s2.transcript.iter().map(|m| &m.digest).collect();
        assert_eq!(d1, d2);
        assert_eq!(s1.a_history, s2.a_history);
    }

    #[test]
    fn parallel_matches_serial() {
        let datasets = || vec![random_measure(15, 2, 18), random_measure(12, 2, 19)];
        let mut cfg = config(2, Mode::Fixed);
        cfg.rounds = 2;
        let val = random_measure(10, 2, 20);
        let mut serial = init_session(datasets(), Some(val.clone()), cfg.clone()).unwrap();
        serial.run().unwrap();
        cfg.parallel = true;
        let mut parallel = init_session(datasets(), Some(val), cfg).unwrap();
        parallel.run().unwrap();
        let d1: Vec<&String> = serial.transcript.iter().map(|m| &m.digest).collect();
        let d2: Vec<&String> = parallel.transcript.iter().map(|m| &m.digest).collect();
        assert_eq!(d1, d2);
    }

    #[test]
    fn monitor_history_non_increasing_on_toy() {
        let datasets = vec![random_measure(20, 2, 21), random_measure(20, 2, 22)];
        let mut cfg = config(2, Mode::Barycenter);
        cfg.support_size = 20;
        cfg.rounds = 6;
        cfg.stop_tol = 0.0;
        let mut session = init_session(datasets, None, cfg).unwrap();
        session.run().unwrap();
        let a0 = session.a_history[0];
        for w in session.a_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-6 * a0, "history {:?}", session.a_history);
        }
    }

    #[test]
    fn honest_transcript_passes_audit() {
        let data = vec![random_measure(15, 2, 23), random_measure(15, 2, 24)];
        let private: Vec<Array2<f64>> = data.iter().map(|d| d.support().to_owned()).collect();
        let mut cfg = config(2, Mode::Barycenter);
        cfg.rounds = 3;
        let mut session = init_session(data, None, cfg).unwrap();
        session.run().unwrap();
        let report = audit_transcript(&session.transcript, &private);
        assert!(report.passed(), "violations: {:?}", report.violations);
        assert_eq!(report.counts["gamma_share"], 6);
    }

    #[test]
    fn planted_violation_is_caught() {
        let data = random_measure(10, 2, 25);
        let private = vec![data.support().to_owned()];
        let leak = Message::new(
            1,
            3,
            MessageBody::GammaShare {
                client_id: 0,
                gamma: data.clone(),
            },
        );
        let report = audit_transcript(&[leak], &private);
        assert!(!report.passed());
        assert_eq!(report.violations.len(), 10);
        assert_eq!(report.violations[0].message_index, 0);
    }

    #[test]
    fn transcript_round_trips_through_jsonl() {
        let data = vec![random_measure(10, 2, 26)];
        let val = random_measure(10, 2, 27);
        let mut cfg = config(1, Mode::Fixed);
        cfg.rounds = 2;
        let mut session = init_session(data, Some(val), cfg).unwrap();
        session.run().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("transcript.jsonl");
        session.write_transcript(&path).unwrap();
        let back = read_transcript(&path).unwrap();
        assert_eq!(back.len(), session.transcript.len());
        for (a, b) in back.iter().zip(&session.transcript) {
            assert_eq!(a.digest, b.digest);
            assert_eq!(a.round, b.round);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = config(2, Mode::Fixed);
        cfg.t = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = config(2, Mode::Fixed);
        cfg.lambda = Some(vec![0.7, 0.7]);
        assert!(cfg.validate().is_err());
        let mut cfg = config(0, Mode::Fixed);
        cfg.num_clients = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn shapes_contract() {
        let datasets = vec![
            random_measure(30, 4, 30),
            random_measure(25, 4, 31),
            random_measure(20, 4, 32),
            random_measure(35, 4, 33),
            random_measure(30, 4, 34),
        ];
        let mut cfg = config(5, Mode::Barycenter);
        cfg.support_size = 100;
        let session = init_session(datasets, None, cfg).unwrap();
        for c in &session.clients {
            assert_eq!(c.gamma.support().dim(), (100, 4));
            assert!(c.gamma.weights().iter().all(|&w| (w - 0.01).abs() < 1e-15));
        }
    }
}
