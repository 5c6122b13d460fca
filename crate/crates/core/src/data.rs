//! Trajectory storage, file ingestion and fold splitting.
//!
//! A trajectory holds steps `t = 0..=T`, each with an observation `O_t`, a
//! reward proxy `W_t`, an action and a reward, followed by a terminal
//! half-step `(O_{T+1}, W_{T+1})` that has no action or reward.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed action interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionInterval {
    pub lo: f64,
    pub hi: f64,
}

impl ActionInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("empty action interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn contains(&self, a: f64) -> bool {
        a >= self.lo && a <= self.hi
    }
}

impl Default for ActionInterval {
    fn default() -> Self {
        Self { lo: -1.0, hi: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub obs: Vec<f64>,
    pub proxy: Vec<f64>,
    pub action: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode: u64,
    pub steps: Vec<Step>,
    pub terminal_obs: Vec<f64>,
    pub terminal_proxy: Vec<f64>,
}

impl Trajectory {
    /// Index of the last step carrying an action, i.e. `T`.
    pub fn horizon(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }

    /// Observation at time `t`, including the terminal `t = T + 1`.
    pub fn obs_at(&self, t: usize) -> &[f64] {
        if t == self.steps.len() {
            &self.terminal_obs
        } else {
            &self.steps[t].obs
        }
    }

    pub fn proxy_at(&self, t: usize) -> &[f64] {
        if t == self.steps.len() {
            &self.terminal_proxy
        } else {
            &self.steps[t].proxy
        }
    }
}

/// Dimensions and constants a file does not carry itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub obs_dim: usize,
    pub proxy_dim: usize,
    pub action_interval: ActionInterval,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

/// A validated batch of equal-length trajectories. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
    schema: Schema,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>, schema: Schema) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::EmptyDataset("no trajectories".into()));
        }
        if !(0.0..1.0).contains(&schema.gamma) {
            return Err(Error::Config(format!(
                "discount {} outside [0, 1)",
                schema.gamma
            )));
        }
        let horizon = trajectories[0].steps.len();
        if horizon == 0 {
            return Err(Error::Structure(format!(
                "episode {} has no steps",
                trajectories[0].episode
            )));
        }
        for traj in &trajectories {
            if traj.steps.len() != horizon {
                return Err(Error::Structure(format!(
                    "episode {} has {} steps, expected {} (all trajectories must share T)",
                    traj.episode,
                    traj.steps.len(),
                    horizon
                )));
            }
            for (t, step) in traj.steps.iter().enumerate() {
                check_dims(traj.episode, t, &step.obs, &step.proxy, &schema)?;
                if !schema.action_interval.contains(step.action) || !step.action.is_finite() {
                    return Err(Error::Validation(format!(
                        "episode {} t={}: action {} outside [{}, {}]",
                        traj.episode,
                        t,
                        step.action,
                        schema.action_interval.lo,
                        schema.action_interval.hi
                    )));
                }
                if !step.reward.is_finite() {
                    return Err(Error::Validation(format!(
                        "episode {} t={}: non-finite reward",
                        traj.episode, t
                    )));
                }
            }
            check_dims(
                traj.episode,
                horizon,
                &traj.terminal_obs,
                &traj.terminal_proxy,
                &schema,
            )?;
        }
        Ok(Self {
            trajectories,
            schema,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n(&self) -> usize {
        self.trajectories.len()
    }

    /// `T`: trajectories carry steps `0..=T`.
    pub fn horizon(&self) -> usize {
        self.trajectories[0].horizon()
    }

    pub fn gamma(&self) -> f64 {
        self.schema.gamma
    }

    pub fn obs_dim(&self) -> usize {
        self.schema.obs_dim
    }

    pub fn proxy_dim(&self) -> usize {
        self.schema.proxy_dim
    }

    pub fn action_interval(&self) -> ActionInterval {
        self.schema.action_interval
    }

    /// Same data under a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let schema = Schema {
            gamma,
            ..self.schema
        };
        Dataset::new(self.trajectories.clone(), schema)
    }

    /// `(O_0, W_0)` of every trajectory, in trajectory order.
    pub fn initial_pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.trajectories
            .iter()
            .map(|tr| (tr.steps[0].obs.as_slice(), tr.steps[0].proxy.as_slice()))
    }

    /// Sub-dataset made of the trajectories at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let trajectories = indices
            .iter()
            .map(|&i| self.trajectories[i].clone())
            .collect();
        Dataset::new(trajectories, self.schema)
    }
}

fn check_dims(episode: u64, t: usize, obs: &[f64], proxy: &[f64], schema: &Schema) -> Result<()> {
    if obs.len() != schema.obs_dim || proxy.len() != schema.proxy_dim {
        return Err(Error::Shape(format!(
            "episode {episode} t={t}: got obs/proxy dims {}/{}, expected {}/{}",
            obs.len(),
            proxy.len(),
            schema.obs_dim,
            schema.proxy_dim
        )));
    }
    if obs.iter().chain(proxy).any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "episode {episode} t={t}: non-finite observation or proxy"
        )));
    }
    Ok(())
}

/// One observed `(O_{t-1}, A_{t-1}, O_t, W_t, A_t, R_t, O_{t+1}, W_{t+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTuple {
    pub o_prev: Vec<f64>,
    pub a_prev: f64,
    pub o: Vec<f64>,
    pub w: Vec<f64>,
    pub a: f64,
    pub r: f64,
    pub o_next: Vec<f64>,
    pub w_next: Vec<f64>,
    /// `(trajectory index, t)` with `1 <= t <= T`.
    pub source: (usize, usize),
}

/// Flattens a dataset into its `n * T` tuples, trajectory-major, `t = 1..=T`.
pub fn to_transition_tuples(d: &Dataset) -> Result<Vec<TransitionTuple>> {
    let horizon = d.horizon();
    if horizon == 0 {
        return Err(Error::EmptyDataset(
            "T = 0: no step has a predecessor, so no transition tuples exist".into(),
        ));
    }
    let mut out = Vec::with_capacity(d.n() * horizon);
    for (i, tr) in d.trajectories().iter().enumerate() {
        for t in 1..=horizon {
            let prev = &tr.steps[t - 1];
            let cur = &tr.steps[t];
            out.push(TransitionTuple {
                o_prev: prev.obs.clone(),
                a_prev: prev.action,
                o: cur.obs.clone(),
                w: cur.proxy.clone(),
                a: cur.action,
                r: cur.reward,
                o_next: tr.obs_at(t + 1).to_vec(),
                w_next: tr.proxy_at(t + 1).to_vec(),
                source: (i, t),
            });
        }
    }
    Ok(out)
}

/// Position of tuple `(i, t)` in the output of [`to_transition_tuples`].
pub fn tuple_index(i: usize, t: usize, horizon: usize) -> usize {
    i * horizon + (t - 1)
}

#[derive(Debug, Clone)]
pub struct Fold {
    pub train: Dataset,
    pub validation: Dataset,
    /// Trajectory indices (into the parent dataset) held out in this fold.
    pub validation_indices: Vec<usize>,
}

/// Whole-trajectory k-fold split. Trajectories are shuffled by `seed`, then
/// cut into `k` contiguous chunks; the `n % k` remainder goes to the earliest
/// folds, so sizes are non-increasing.
pub fn split_kfold(d: &Dataset, k: usize, seed: u64) -> Result<Vec<Fold>> {
    let n = d.n();
    if k < 2 || k > n {
        return Err(Error::Config(format!(
            "k-fold needs 2 <= k <= n, got k={k}, n={n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha12Rng::seed_from_u64(seed));

    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut held: Vec<usize> = order[start..start + size].to_vec();
        held.sort_unstable();
        start += size;
        let train_idx: Vec<usize> = (0..n).filter(|i| held.binary_search(i).is_err()).collect();
        folds.push(Fold {
            train: d.subset(&train_idx)?,
            validation: d.subset(&held)?,
            validation_indices: held,
        });
    }
    Ok(folds)
}

fn header(obs_dim: usize, proxy_dim: usize) -> Vec<String> {
    let mut cols = vec!["episode".to_string(), "t".to_string()];
    cols.extend((0..obs_dim).map(|j| format!("obs_{j}")));
    cols.extend((0..proxy_dim).map(|j| format!("proxy_{j}")));
    cols.push("action".into());
    cols.push("reward".into());
    cols
}

/// A parsed row before grouping into trajectories.
struct Row {
    line: usize,
    episode: u64,
    t: usize,
    obs: Vec<f64>,
    proxy: Vec<f64>,
    action_reward: Option<(f64, f64)>,
}

pub fn load_dataset(path: &Path, format: Format, schema: Schema) -> Result<Dataset> {
    let rows = match format {
        Format::Csv => read_csv_rows(path, &schema)?,
        Format::Jsonl => read_jsonl_rows(path, &schema)?,
    };
    assemble(path, rows, schema)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_f64(path: &Path, line: usize, col: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("column `{col}`: cannot parse `{s}` as a number")))
}

fn read_csv_rows(path: &Path, schema: &Schema) -> Result<Vec<Row>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let expected = header(schema.obs_dim, schema.proxy_dim);
    let got: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if got != expected {
        return Err(parse_err(
            path,
            1,
            format!("header must be `{}`, got `{}`", expected.join(","), got.join(",")),
        ));
    }
    let d_o = schema.obs_dim;
    let d_w = schema.proxy_dim;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != expected.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, got {}", expected.len(), rec.len()),
            ));
        }
        let episode = rec[0]
            .trim()
            .parse::<u64>()
            .map_err(|_| parse_err(path, line, format!("bad episode `{}`", &rec[0])))?;
        let t = rec[1]
            .trim()
            .parse::<usize>()
            .map_err(|_| parse_err(path, line, format!("bad t `{}`", &rec[1])))?;
        let mut obs = Vec::with_capacity(d_o);
        for j in 0..d_o {
            obs.push(parse_f64(path, line, &expected[2 + j], &rec[2 + j])?);
        }
        let mut proxy = Vec::with_capacity(d_w);
        for j in 0..d_w {
            proxy.push(parse_f64(path, line, &expected[2 + d_o + j], &rec[2 + d_o + j])?);
        }
        let a = rec[2 + d_o + d_w].trim();
        let r = rec[3 + d_o + d_w].trim();
        let action_reward = match (a.is_empty(), r.is_empty()) {
            (true, true) => None,
            (false, false) => Some((
                parse_f64(path, line, "action", a)?,
                parse_f64(path, line, "reward", r)?,
            )),
            _ => {
                return Err(parse_err(
                    path,
                    line,
                    "action and reward must both be present or both empty",
                ))
            }
        };
        rows.push(Row {
            line,
            episode,
            t,
            obs,
            proxy,
            action_reward,
        });
    }
    Ok(rows)
}

fn json_number(path: &Path, line: usize, obj: &serde_json::Map<String, serde_json::Value>, key: &str) -> Result<Option<f64>> {
    match obj.get(key) {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(serde_json::Value::String(s)) if s.trim().is_empty() => Ok(None),
        Some(serde_json::Value::Number(n)) => Ok(n.as_f64()),
        Some(serde_json::Value::String(s)) => parse_f64(path, line, key, s).map(Some),
        Some(other) => Err(parse_err(path, line, format!("key `{key}`: unexpected value {other}"))),
    }
}

fn read_jsonl_rows(path: &Path, schema: &Schema) -> Result<Vec<Row>> {
    let reader = BufReader::new(File::open(path)?);
    let keys = header(schema.obs_dim, schema.proxy_dim);
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| parse_err(path, line_no, e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| parse_err(path, line_no, "each line must be a JSON object"))?;
        if let Some(unknown) = obj.keys().find(|k| !keys.contains(k)) {
            return Err(parse_err(path, line_no, format!("unknown key `{unknown}`")));
        }
        let need = |key: &str| -> Result<f64> {
            json_number(path, line_no, obj, key)?
                .ok_or_else(|| parse_err(path, line_no, format!("missing key `{key}`")))
        };
        let episode = need("episode")?;
        let t = need("t")?;
        if episode < 0.0 || episode.fract() != 0.0 || t < 0.0 || t.fract() != 0.0 {
            return Err(parse_err(path, line_no, "episode and t must be non-negative integers"));
        }
        let obs = (0..schema.obs_dim)
            .map(|j| need(&format!("obs_{j}")))
            .collect::<Result<Vec<_>>>()?;
        let proxy = (0..schema.proxy_dim)
            .map(|j| need(&format!("proxy_{j}")))
            .collect::<Result<Vec<_>>>()?;
        let a = json_number(path, line_no, obj, "action")?;
        let r = json_number(path, line_no, obj, "reward")?;
        let action_reward = match (a, r) {
            (None, None) => None,
            (Some(a), Some(r)) => Some((a, r)),
            _ => {
                return Err(parse_err(
                    path,
                    line_no,
                    "action and reward must both be present or both empty",
                ))
            }
        };
        rows.push(Row {
            line: line_no,
            episode: episode as u64,
            t: t as usize,
            obs,
            proxy,
            action_reward,
        });
    }
    Ok(rows)
}

fn assemble(path: &Path, rows: Vec<Row>, schema: Schema) -> Result<Dataset> {
    // Episodes keep the order of their first appearance in the file.
    let mut order: Vec<u64> = Vec::new();
    let mut groups: HashMap<u64, Vec<Row>> = HashMap::new();
    for row in rows {
        groups
            .entry(row.episode)
            .or_insert_with(|| {
                order.push(row.episode);
                Vec::new()
            })
            .push(row);
    }
    let mut trajectories = Vec::with_capacity(order.len());
    for ep in order {
        let mut rows = groups.remove(&ep).unwrap_or_default();
        rows.sort_by_key(|r| r.t);
        for (expect, row) in rows.iter().enumerate() {
            if row.t != expect {
                return Err(Error::Structure(format!(
                    "episode {ep}: time indices are not contiguous from 0 (found t={} where t={expect} was expected, line {})",
                    row.t, row.line
                )));
            }
        }
        let terminal = rows.pop().ok_or_else(|| Error::Structure(format!("episode {ep} is empty")))?;
        if terminal.action_reward.is_some() {
            return Err(Error::Structure(format!(
                "episode {ep}: last row (t={}) must be a terminal row with empty action and reward",
                terminal.t
            )));
        }
        let mut steps = Vec::with_capacity(rows.len());
        for row in rows {
            let (action, reward) = row.action_reward.ok_or_else(|| {
                Error::Structure(format!(
                    "episode {ep}: terminal row at t={} is not the last step (line {})",
                    row.t, row.line
                ))
            })?;
            if !schema.action_interval.contains(action) {
                return Err(Error::Validation(format!(
                    "{}:{}: action {action} outside [{}, {}]",
                    path.display(),
                    row.line,
                    schema.action_interval.lo,
                    schema.action_interval.hi
                )));
            }
            steps.push(Step {
                obs: row.obs,
                proxy: row.proxy,
                action,
                reward,
            });
        }
        trajectories.push(Trajectory {
            episode: ep,
            steps,
            terminal_obs: terminal.obs,
            terminal_proxy: terminal.proxy,
        });
    }
    Dataset::new(trajectories, schema)
}

/// Writes the dataset with full round-trip precision. Rust's float
/// formatting is locale-independent and prints the shortest exact decimal.
pub fn write_dataset(d: &Dataset, path: &Path, format: Format) -> Result<()> {
    let cols = header(d.obs_dim(), d.proxy_dim());
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(&cols)?;
            for tr in d.trajectories() {
                for t in 0..=tr.steps.len() {
                    let mut rec = vec![tr.episode.to_string(), t.to_string()];
                    rec.extend(tr.obs_at(t).iter().map(|v| v.to_string()));
                    rec.extend(tr.proxy_at(t).iter().map(|v| v.to_string()));
                    if let Some(step) = tr.steps.get(t) {
                        rec.push(step.action.to_string());
                        rec.push(step.reward.to_string());
                    } else {
                        rec.push(String::new());
                        rec.push(String::new());
                    }
                    w.write_record(&rec)?;
                }
            }
            w.flush()?;
        }
        Format::Jsonl => {
            for tr in d.trajectories() {
                for t in 0..=tr.steps.len() {
                    let mut obj = serde_json::Map::new();
                    obj.insert("episode".into(), tr.episode.into());
                    obj.insert("t".into(), t.into());
                    for (j, v) in tr.obs_at(t).iter().enumerate() {
                        obj.insert(format!("obs_{j}"), (*v).into());
                    }
                    for (j, v) in tr.proxy_at(t).iter().enumerate() {
                        obj.insert(format!("proxy_{j}"), (*v).into());
                    }
                    let (a, r) = match tr.steps.get(t) {
                        Some(s) => (s.action.into(), s.reward.into()),
                        None => (serde_json::Value::Null, serde_json::Value::Null),
                    };
                    obj.insert("action".into(), a);
                    obj.insert("reward".into(), r);
                    serde_json::to_writer(&mut out, &obj)?;
                    out.write_all(b"\n")?;
                }
            }
            out.flush()?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy(n: usize, steps: usize) -> Dataset {
        let trajectories = (0..n)
            .map(|i| Trajectory {
                episode: i as u64,
                steps: (0..steps)
                    .map(|t| Step {
                        obs: vec![(10 * i + t) as f64],
                        proxy: vec![-((10 * i + t) as f64)],
                        action: 0.1 * t as f64 - 0.5,
                        reward: t as f64,
                    })
                    .collect(),
                terminal_obs: vec![(10 * i + steps) as f64],
                terminal_proxy: vec![-((10 * i + steps) as f64)],
            })
            .collect();
        Dataset::new(trajectories, schema()).unwrap()
    }

    fn schema() -> Schema {
        Schema {
            obs_dim: 1,
            proxy_dim: 1,
            action_interval: ActionInterval::default(),
            gamma: 0.9,
        }
    }

    fn write(contents: &str, ext: &str) -> tempfile::TempPath {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f.into_temp_path()
    }

    const TWO_EPISODES: &str = "episode,t,obs_0,proxy_0,action,reward
0,0,0.1,0.2,0.5,1.0
0,1,0.3,0.4,-0.5,2.0
0,2,0.5,0.6,0.0,3.0
0,3,0.7,0.8,,
1,0,1.1,1.2,0.5,1.0
1,1,1.3,1.4,-0.5,2.0
1,2,1.5,1.6,0.0,3.0
1,3,1.7,1.8,,
";

    #[test]
    fn loads_two_episodes() {
        let p = write(TWO_EPISODES, ".csv");
        let d = load_dataset(&p, Format::Csv, schema()).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.horizon(), 2);
        assert_eq!(d.trajectories()[1].terminal_obs, vec![1.7]);
    }

    #[test]
    fn rejects_gap_in_time_index() {
        let p = write(
            "episode,t,obs_0,proxy_0,action,reward\n0,0,0,0,0,0\n0,2,0,0,,\n",
            ".csv",
        );
        let err = load_dataset(&p, Format::Csv, schema()).unwrap_err();
        assert!(matches!(err, Error::Structure(_)), "{err}");
    }

    #[test]
    fn rejects_action_outside_interval() {
        let p = write(
            "episode,t,obs_0,proxy_0,action,reward\n0,0,0,0,1.5,0\n0,1,0,0,,\n",
            ".csv",
        );
        let err = load_dataset(&p, Format::Csv, schema()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn malformed_row_names_its_line() {
        let p = write(
            "episode,t,obs_0,proxy_0,action,reward\n0,0,0,0,0,0\n0,1,abc,0,0,0\n0,2,0,0,,\n",
            ".csv",
        );
        match load_dataset(&p, Format::Csv, schema()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn wrong_header_is_a_parse_error() {
        let p = write("episode,t,o,proxy_0,action,reward\n0,0,0,0,,\n", ".csv");
        assert!(matches!(
            load_dataset(&p, Format::Csv, schema()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn jsonl_matches_csv() {
        let csv_path = write(TWO_EPISODES, ".csv");
        let d = load_dataset(&csv_path, Format::Csv, schema()).unwrap();
        let out = tempfile::Builder::new().suffix(".jsonl").tempfile().unwrap().into_temp_path();
        write_dataset(&d, &out, Format::Jsonl).unwrap();
        let back = load_dataset(&out, Format::Jsonl, schema()).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn tuple_counts_and_shift() {
        let d = toy(2, 4); // T = 3
        let tuples = to_transition_tuples(&d).unwrap();
        assert_eq!(tuples.len(), 6);
        let first = &tuples[tuple_index(1, 1, 3)];
        assert_eq!(first.source, (1, 1));
        assert_eq!(first.o_prev, d.trajectories()[1].steps[0].obs);
    }

    #[test]
    fn single_step_boundary_tuple() {
        let d = toy(1, 2); // T = 1
        let tuples = to_transition_tuples(&d).unwrap();
        assert_eq!(tuples.len(), 1);
        let tu = &tuples[0];
        let tr = &d.trajectories()[0];
        assert_eq!(tu.o_prev, tr.steps[0].obs);
        assert_eq!(tu.a_prev, tr.steps[0].action);
        assert_eq!(tu.o, tr.steps[1].obs);
        assert_eq!(tu.r, tr.steps[1].reward);
        assert_eq!(tu.o_next, tr.terminal_obs);
        assert_eq!(tu.w_next, tr.terminal_proxy);
    }

    #[test]
    fn zero_horizon_has_no_tuples() {
        let d = toy(2, 1);
        assert!(matches!(to_transition_tuples(&d), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn kfold_sizes() {
        let d = toy(10, 2);
        let sizes: Vec<usize> = split_kfold(&d, 5, 3)
            .unwrap()
            .iter()
            .map(|f| f.validation.n())
            .collect();
        assert_eq!(sizes, vec![2; 5]);
        let sizes: Vec<usize> = split_kfold(&d, 3, 3)
            .unwrap()
            .iter()
            .map(|f| f.validation.n())
            .collect();
        assert_eq!(sizes, vec![4, 3, 3]);
    }

    #[test]
    fn kfold_partition_and_determinism() {
        let d = toy(10, 2);
        let a = split_kfold(&d, 3, 11).unwrap();
        let b = split_kfold(&d, 3, 11).unwrap();
        let mut seen: Vec<usize> = Vec::new();
        for (fa, fb) in a.iter().zip(&b) {
            assert_eq!(fa.validation_indices, fb.validation_indices);
            assert_eq!(fa.train.n() + fa.validation.n(), 10);
            seen.extend(&fa.validation_indices);
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn kfold_rejects_too_many_folds() {
        assert!(matches!(split_kfold(&toy(3, 2), 4, 0), Err(Error::Config(_))));
        assert!(matches!(split_kfold(&toy(3, 2), 1, 0), Err(Error::Config(_))));
    }
}
