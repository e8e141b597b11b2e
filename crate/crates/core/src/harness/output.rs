use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::protocols::Protocol;
use crate::regret::{bound_cdogd, bound_damtogd, bound_ogd, AgentConstants, BoundConstants, RegretTrace};

use super::config::RunConfig;
use super::experiment::{manifest_seed_entries, ExperimentReport, SweepReport};
use super::HarnessError;

pub const TRACE_HEADER: &str = "run_id,seed,protocol,t,agent,cumulative_loss,comparator_loss,regret_prefix";
const CONSTANTS_HEADER: &str =
    "seed,agent,lipschitz,lbar,k,l_sum,tau_sum,tau_min,tau_max,delta_tau,support_size,q,p,c_term";
const SWEEP_HEADER: &str = "axis,value,protocol,seed,horizon,final_regret";
const BOUNDS_HEADER: &str = "seed,protocol,horizon,measured_regret,bound,applicable,dominated";

/// Shortest-round-trip-safe float text (17 significant digits).
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// One line of a trace CSV. `agent` is `None` for the network aggregate,
/// whose loss columns are sums over agents.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub run_id: String,
    pub seed: u64,
    pub protocol: Protocol,
    pub t: usize,
    pub agent: Option<usize>,
    pub cumulative_loss: f64,
    pub comparator_loss: f64,
    pub regret_prefix: f64,
}

impl TraceRow {
    pub fn to_csv(&self) -> String {
        let agent = self.agent.map_or("-1".to_string(), |a| a.to_string());
        format!(
            "{},{},{},{},{},{},{},{}",
            self.run_id,
            self.seed,
            self.protocol,
            self.t,
            agent,
            fmt_float(self.cumulative_loss),
            fmt_float(self.comparator_loss),
            fmt_float(self.regret_prefix)
        )
    }
}

/// Rows for every round `t = 1..=T`: the aggregate first, then agents in
/// index order. Per-agent `regret_prefix` is that agent's own share.
pub fn trace_rows(run_id: &str, seed: u64, protocol: Protocol, trace: &RegretTrace) -> Vec<TraceRow> {
    let n_agents = trace.cumulative.len();
    let mut rows = Vec::with_capacity(trace.horizon() * (n_agents + 1));
    for r in 0..trace.horizon() {
        let row = |agent, a: f64, b: f64, regret| TraceRow {
            run_id: run_id.to_string(),
            seed,
            protocol,
            t: r + 1,
            agent,
            cumulative_loss: a,
            comparator_loss: b,
            regret_prefix: regret,
        };
        let a: f64 = trace.cumulative.iter().map(|c| c[r]).sum();
        let b: f64 = trace.comparator_cumulative.iter().map(|c| c[r]).sum();
        rows.push(row(None, a, b, trace.regret[r]));
        for n in 0..n_agents {
            let (a, b) = (trace.cumulative[n][r], trace.comparator_cumulative[n][r]);
            rows.push(row(Some(n), a, b, a - b));
        }
    }
    rows
}

/// Ordered `key = value` pairs. Keys may repeat (`file`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn push(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.push((key.into(), value.into()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries.iter().filter(move |(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut m = Manifest::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
            m.push(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Manifest::parse(&text).map_err(|detail| manifest_err(path, detail))
    }

    fn require(&self, path: &Path, key: &str) -> Result<&str, HarnessError> {
        self.get(key).ok_or_else(|| manifest_err(path, format!("missing key `{key}`")))
    }
}

fn manifest_err(path: &Path, detail: impl Into<String>) -> HarnessError {
    HarnessError::Manifest {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

fn write_file(dir: &Path, name: &str, contents: &str, manifest: &mut Manifest) -> Result<(), HarnessError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| HarnessError::io(&path, e))?;
    manifest.push("file", name);
    Ok(())
}

fn matrix_csv(rows: impl IntoIterator<Item = (String, crate::losses::Matrix)>) -> String {
    let mut s = String::from("matrix,row,col,value\n");
    for (label, m) in rows {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let _ = writeln!(s, "{label},{i},{j},{}", fmt_float(m[(i, j)]));
            }
        }
    }
    s
}

fn manifest_header(m: &mut Manifest, cfg: &RunConfig, run_id: &str) {
    let protocols: Vec<&str> = cfg.protocols.iter().map(|p| p.name()).collect();
    m.push("run_id", run_id);
    m.push("config_hash", cfg.hash());
    m.push("version", env!("CARGO_PKG_VERSION"));
    m.push("protocols", protocols.join(","));
    m.push("seeds", cfg.seeds.to_string());
    m.push("master_seed", cfg.seed.to_string());
    m.push("horizon", cfg.horizon.to_string());
    m.push("n_agents", cfg.n_agents.to_string());
    m.push("diameter", fmt_float(cfg.domain().diameter()));
    m.push("c", fmt_float(cfg.c));
}

pub(crate) fn write_experiment(report: &ExperimentReport, dir: &Path) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let cfg = &report.config;
    let mut m = Manifest::default();
    manifest_header(&mut m, cfg, &report.run_id);
    m.push("topology_edges", report.topology.n_edges().to_string());
    m.push("topology_retries", report.topology.retries().to_string());

    write_file(dir, "config.txt", &cfg.canonical(), &mut m)?;
    write_file(dir, "topology.txt", &report.topology.to_edge_list(), &mut m)?;

    for &protocol in &cfg.protocols {
        let mut s = String::from(TRACE_HEADER);
        s.push('\n');
        for outcome in report.completed() {
            if let Some(p) = outcome.outcome(protocol) {
                for row in trace_rows(&report.run_id, outcome.seed_value, protocol, &p.trace) {
                    s.push_str(&row.to_csv());
                    s.push('\n');
                }
            }
        }
        write_file(dir, &format!("trace_{protocol}.csv"), &s, &mut m)?;
    }

    let mut s = String::from(CONSTANTS_HEADER);
    s.push('\n');
    for outcome in report.completed() {
        let k = &outcome.constants;
        for (n, a) in k.agents.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{n},{},{},{},{},{},{},{},{},{},{},{},{}",
                outcome.seed_index,
                fmt_float(k.lipschitz[n]),
                fmt_float(a.lbar),
                fmt_float(a.k),
                fmt_float(a.l_sum),
                a.tau_sum,
                a.tau_min,
                a.tau_max,
                a.delta_tau,
                a.support_size,
                fmt_float(a.q),
                fmt_float(a.p),
                fmt_float(a.c_term)
            );
        }
    }
    write_file(dir, "constants.csv", &s, &mut m)?;

    if cfg.dump_matrices {
        for outcome in report.completed() {
            let i = outcome.seed_index;
            let gt = &outcome.ground_truth;
            let memories = std::iter::once(("common".to_string(), gt.common.clone()))
                .chain(gt.personal.iter().enumerate().map(|(n, p)| (format!("personal{n}"), p.clone())));
            write_file(dir, &format!("memories_seed{i}.csv"), &matrix_csv(memories), &mut m)?;
            let w = [("weights".to_string(), outcome.weights.matrix().clone())];
            write_file(dir, &format!("weights_seed{i}.csv"), &matrix_csv(w), &mut m)?;
            let a = [("mixing".to_string(), outcome.mixing.matrix().clone())];
            write_file(dir, &format!("mixing_seed{i}.csv"), &matrix_csv(a), &mut m)?;
        }
    }

    for (i, seed) in report.seeds.iter().enumerate() {
        match seed {
            Ok(outcome) => manifest_seed_entries(&mut m, outcome),
            Err(e) => m.push(format!("seed.{i}.status"), format!("failed: {e}")),
        }
    }

    let path = dir.join("manifest.txt");
    fs::write(&path, m.render()).map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}

pub(crate) fn write_sweep(base: &RunConfig, report: &SweepReport, dir: &Path) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let run_id = base.hash()[..12].to_string();
    let mut m = Manifest::default();
    manifest_header(&mut m, base, &run_id);
    m.push("sweep_axis", report.axis.name());
    let values: Vec<String> = report.values.iter().map(|v| format!("{v:?}")).collect();
    m.push("sweep_values", values.join(","));
    write_file(dir, "config.txt", &base.canonical(), &mut m)?;

    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for p in &report.points {
        let _ = writeln!(
            s,
            "{},{:?},{},{},{},{}",
            report.axis,
            p.value,
            p.protocol,
            p.seed_value,
            p.horizon,
            fmt_float(p.final_regret)
        );
    }
    write_file(dir, &format!("sweep_{}.csv", report.axis), &s, &mut m)?;
    for p in report.points.iter().filter(|p| p.protocol == base.protocols[0]) {
        m.push(format!("point.{:?}.{}.stream_digest", p.value, p.seed_index), p.stream_digest.clone());
        m.push(format!("point.{:?}.{}.weights_digest", p.value, p.seed_index), p.weights_digest.clone());
    }
    for (value, seed, e) in &report.failures {
        m.push(format!("point.{value:?}.{seed}.status"), format!("failed: {e}"));
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, m.render()).map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}

/// Measured regret against the closed-form bound of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub seed_index: usize,
    pub protocol: Protocol,
    pub horizon: usize,
    pub measured: f64,
    /// `None` when the bound's hypotheses do not hold (consensus OGD under
    /// non-uniform weights).
    pub bound: Option<f64>,
}

impl BoundRow {
    pub fn dominated(&self) -> Option<bool> {
        self.bound.map(|b| self.measured <= b)
    }

    pub fn to_csv(&self) -> String {
        let (bound, applicable, dominated) = match (self.bound, self.dominated()) {
            (Some(b), Some(d)) => (fmt_float(b), "true", d.to_string()),
            _ => ("NA".to_string(), "false", "NA".to_string()),
        };
        format!(
            "{},{},{},{},{bound},{applicable},{dominated}",
            self.seed_index,
            self.protocol,
            self.horizon,
            fmt_float(self.measured)
        )
    }
}

fn parse_field<T: std::str::FromStr>(path: &Path, what: &str, s: &str) -> Result<T, HarnessError> {
    s.trim()
        .parse()
        .map_err(|_| manifest_err(path, format!("cannot parse {what} `{s}`")))
}

fn read_constants(path: &Path, seed_index: usize, b: f64, c: f64) -> Result<BoundConstants, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(CONSTANTS_HEADER) {
        return Err(manifest_err(path, "unexpected constants header"));
    }
    let mut lipschitz = Vec::new();
    let mut agents = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 14 {
            return Err(manifest_err(path, format!("malformed constants row `{line}`")));
        }
        if parse_field::<usize>(path, "seed", f[0])? != seed_index {
            continue;
        }
        lipschitz.push(parse_field(path, "lipschitz", f[2])?);
        agents.push(AgentConstants {
            lbar: parse_field(path, "lbar", f[3])?,
            k: parse_field(path, "k", f[4])?,
            l_sum: parse_field(path, "l_sum", f[5])?,
            tau_sum: parse_field(path, "tau_sum", f[6])?,
            tau_min: parse_field(path, "tau_min", f[7])?,
            tau_max: parse_field(path, "tau_max", f[8])?,
            delta_tau: parse_field(path, "delta_tau", f[9])?,
            support_size: parse_field(path, "support_size", f[10])?,
            q: parse_field(path, "q", f[11])?,
            p: parse_field(path, "p", f[12])?,
            c_term: parse_field(path, "c_term", f[13])?,
        });
    }
    if agents.is_empty() {
        return Err(manifest_err(path, format!("no constants for seed {seed_index}")));
    }
    Ok(BoundConstants { b, c, lipschitz, agents })
}

/// Reads a run manifest, evaluates each applicable bound at the run's
/// horizon, and writes `bounds.csv` beside the manifest.
pub fn report_bounds(manifest_path: &Path) -> Result<(PathBuf, Vec<BoundRow>), HarnessError> {
    let m = Manifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let horizon: usize = parse_field(manifest_path, "horizon", m.require(manifest_path, "horizon")?)?;
    let seeds: usize = parse_field(manifest_path, "seeds", m.require(manifest_path, "seeds")?)?;
    let b: f64 = parse_field(manifest_path, "diameter", m.require(manifest_path, "diameter")?)?;
    let c: f64 = parse_field(manifest_path, "c", m.require(manifest_path, "c")?)?;
    let protocols = m
        .require(manifest_path, "protocols")?
        .split(',')
        .map(|p| p.parse::<Protocol>().map_err(|e| manifest_err(manifest_path, e)))
        .collect::<Result<Vec<_>, _>>()?;
    if !m.get_all("file").any(|f| f == "constants.csv") {
        return Err(manifest_err(manifest_path, "no constants.csv listed"));
    }
    let constants_path = dir.join("constants.csv");

    let mut rows = Vec::new();
    for i in 0..seeds {
        if m.get(&format!("seed.{i}.status")) != Some("ok") {
            continue;
        }
        let constants = read_constants(&constants_path, i, b, c)?;
        let key = |k: &str| format!("seed.{i}.{k}");
        let alpha: f64 = parse_field(manifest_path, "alpha", m.require(manifest_path, &key("alpha"))?)?;
        let uniform: bool = parse_field(
            manifest_path,
            "weights_uniform",
            m.require(manifest_path, &key("weights_uniform"))?,
        )?;
        for &protocol in &protocols {
            let measured: f64 = parse_field(
                manifest_path,
                "regret",
                m.require(manifest_path, &key(&format!("regret.{protocol}")))?,
            )?;
            let bound = match protocol {
                Protocol::Ogd => Some(bound_ogd(&constants, horizon)),
                Protocol::Cdogd if uniform => bound_cdogd(&constants, alpha, horizon).ok(),
                Protocol::Cdogd => None,
                Protocol::Damtogd => Some(bound_damtogd(&constants, horizon)),
            };
            rows.push(BoundRow {
                seed_index: i,
                protocol,
                horizon,
                measured,
                bound,
            });
        }
    }

    let mut s = String::from(BOUNDS_HEADER);
    s.push('\n');
    for r in &rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    let out = dir.join("bounds.csv");
    fs::write(&out, s).map_err(|e| HarnessError::io(&out, e))?;
    Ok((out, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_text() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_float(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn manifest_render_parse() {
        let mut m = Manifest::default();
        m.push("a", "1");
        m.push("file", "x.csv");
        m.push("file", "y.csv");
        let back = Manifest::parse(&m.render()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.get_all("file").collect::<Vec<_>>(), ["x.csv", "y.csv"]);
        assert!(Manifest::parse("no equals sign").is_err());
    }

    #[test]
    fn trace_rows_put_aggregate_first() {
        let trace = RegretTrace {
            cumulative: vec![vec![1.0, 3.0], vec![2.0, 2.5]],
            comparator_cumulative: vec![vec![0.5, 1.0], vec![1.0, 2.0]],
            regret: vec![1.5, 2.5],
            comparators: vec![],
        };
        let rows = trace_rows("abc", 7, Protocol::Ogd, &trace);
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].agent, None);
        assert_eq!(rows[0].cumulative_loss, 3.0);
        assert_eq!(rows[3].t, 2);
        assert_eq!(rows[4].agent, Some(0));
        assert_eq!(rows[4].regret_prefix, 2.0);
        assert!(rows[0].to_csv().starts_with("abc,7,ogd,1,-1,"));
    }

    #[test]
    fn inapplicable_bound_renders_na() {
        let r = BoundRow {
            seed_index: 0,
            protocol: Protocol::Cdogd,
            horizon: 10,
            measured: 1.0,
            bound: None,
        };
        assert!(r.to_csv().ends_with(",NA,false,NA"));
    }
}
