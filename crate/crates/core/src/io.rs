//! CSV and JSON file formats shared by the command-line stages.
//!
//! Every CSV written here starts with a `# config_hash: <hex>` comment line; readers
//! skip `#` lines. Floats are written in Rust's shortest round-trip form, so files are
//! byte-for-byte reproducible and re-read exactly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::empowerment::{EmpowermentAssignment, RawResponses, DECISION_COLUMNS, HEALTHCARE_COLUMNS};
use crate::error::{Error, Result};
use crate::graph::{load_adjacency, AdjacencyGraph};
use crate::inference::{ChainDraws, ParamDiagnostic, PosteriorDraws, Summary};
use crate::model::{ChildRecord, Field, InterceptMode, ModelState, Outcomes, Profile, Vaccine};
use crate::validate::ValidationReport;

pub const ADJACENCY_FILE: &str = "adjacency.csv";
pub const STATES_FILE: &str = "states.csv";
pub const RECORDS_FILE: &str = "records.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const DRAWS_FILE: &str = "draws.csv";
pub const META_FILE: &str = "meta.json";
pub const FIT_CONFIG_FILE: &str = "config.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const EFFECTS_FILE: &str = "effects.csv";
pub const VALIDATION_FILE: &str = "validation.csv";
pub const CORRELATION_FILE: &str = "correlation.csv";
pub const RESPONSES_FILE: &str = "responses.csv";
pub const UNITS_GEOJSON_FILE: &str = "units.geojson";
pub const PREDICTIONS_GEOJSON_FILE: &str = "predictions.geojson";
pub const SBC_FILE: &str = "sbc.json";

const HASH_PREFIX: &str = "# config_hash: ";

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?))
}

pub fn write_hash_header<W: Write>(w: &mut W, hash: &str) -> Result<()> {
    writeln!(w, "{HASH_PREFIX}{hash}")?;
    Ok(())
}

/// The config hash recorded in the first line of a file, if any.
pub fn read_hash_header(path: &Path) -> Result<Option<String>> {
    let mut line = String::new();
    open(path)?.read_line(&mut line)?;
    Ok(line.trim_end().strip_prefix(HASH_PREFIX).map(str::to_string))
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r)
}

pub fn read_graph(dir: &Path) -> Result<AdjacencyGraph> {
    load_adjacency(open(&dir.join(ADJACENCY_FILE))?, open(&dir.join(STATES_FILE))?)
}

pub fn write_graph(dir: &Path, graph: &AdjacencyGraph, hash: &str) -> Result<()> {
    let mut out = create(&dir.join(ADJACENCY_FILE))?;
    write_hash_header(&mut out, hash)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["unit_a", "unit_b"])?;
    for (a, b) in graph.edges() {
        w.write_record([&graph.unit_ids()[a], &graph.unit_ids()[b]])?;
    }
    w.flush()?;
    let mut out = create(&dir.join(STATES_FILE))?;
    write_hash_header(&mut out, hash)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["unit", "state"])?;
    for (j, id) in graph.unit_ids().iter().enumerate() {
        w.write_record([id, &graph.state_names()[graph.state_of(j)]])?;
    }
    w.flush()?;
    Ok(())
}

/// Children and the survey years their wave indices refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordSet {
    pub records: Vec<ChildRecord>,
    pub years: Vec<i32>,
    /// Rows dropped for a missing value or an age outside 12-23 months.
    pub dropped: usize,
}

impl RecordSet {
    pub fn n_times(&self) -> usize {
        self.years.len()
    }

    pub fn wave_of(&self, year: i32) -> Option<usize> {
        self.years.binary_search(&year).ok()
    }
}

const RECORD_COLUMNS: [&str; 10] =
    ["child_id", "lga", "year", "bcg", "dpt_complete", "mcv1", "all_basic", "zero_dose", "dm_class", "hc_class"];

fn missing(field: &str) -> bool {
    matches!(field, "" | "NA" | "na" | ".")
}

fn column_index(headers: &csv::StringRecord, name: &str, file: &str) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema(format!("{file}: missing column `{name}`")))
}

fn parse_flag(v: &str, column: &str, row: usize) -> Result<bool> {
    match v {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(Error::Schema(format!("records row {row}: `{column}` must be 0 or 1, got `{v}`"))),
    }
}

/// Reads the records CSV. Waves are the sorted distinct survey years. Rows with a missing
/// value are dropped; when an `age_months` column is present, only ages 12-23 are kept.
pub fn read_records<R: Read>(input: R, graph: &AdjacencyGraph) -> Result<RecordSet> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> =
        RECORD_COLUMNS.iter().map(|c| column_index(&headers, c, "records")).collect::<Result<_>>()?;
    let age = headers.iter().position(|h| h == "age_months");
    let units: HashMap<&str, usize> = graph.unit_ids().iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let mut raw = Vec::new();
    let mut dropped = 0;
    for (n, row) in rdr.records().enumerate() {
        let row = row?;
        let line = n + 1;
        let get = |k: usize| row.get(idx[k]).unwrap_or("");
        if (0..RECORD_COLUMNS.len()).any(|k| missing(get(k))) {
            dropped += 1;
            continue;
        }
        if let Some(a) = age {
            let v = row.get(a).unwrap_or("");
            if missing(v) {
                dropped += 1;
                continue;
            }
            let months: f64 =
                v.parse().map_err(|_| Error::Schema(format!("records row {line}: bad age_months `{v}`")))?;
            if !(12.0..24.0).contains(&months) {
                dropped += 1;
                continue;
            }
        }
        let lga = *units
            .get(get(1))
            .ok_or_else(|| Error::Schema(format!("records row {line}: unknown unit `{}`", get(1))))?;
        let year: i32 =
            get(2).parse().map_err(|_| Error::Schema(format!("records row {line}: bad year `{}`", get(2))))?;
        let outcomes = Outcomes {
            bcg: parse_flag(get(3), "bcg", line)?,
            dpt_complete: parse_flag(get(4), "dpt_complete", line)?,
            mcv1: parse_flag(get(5), "mcv1", line)?,
            all_basic: parse_flag(get(6), "all_basic", line)?,
            zero_dose: parse_flag(get(7), "zero_dose", line)?,
        };
        outcomes.check_consistency().map_err(|e| Error::Schema(format!("records row {line}: {e}")))?;
        let class = |k: usize, name: &str| -> Result<u8> {
            match get(k) {
                "0" => Ok(0),
                "1" => Ok(1),
                "2" => Ok(2),
                v => Err(Error::Schema(format!("records row {line}: `{name}` must be 0, 1 or 2, got `{v}`"))),
            }
        };
        let dm_class = class(8, "dm_class")?;
        let hc_class = class(9, "hc_class")?;
        raw.push((get(0).to_string(), lga, year, outcomes, dm_class, hc_class));
    }
    let years: Vec<i32> = raw.iter().map(|r| r.2).collect::<BTreeSet<_>>().into_iter().collect();
    let records = raw
        .into_iter()
        .map(|(child_id, lga, year, outcomes, dm_class, hc_class)| ChildRecord {
            child_id,
            lga,
            time: years.binary_search(&year).expect("year collected above"),
            outcomes,
            dm_class,
            hc_class,
        })
        .collect();
    Ok(RecordSet { records, years, dropped })
}

pub fn write_records<W: Write>(
    out: W,
    records: &[ChildRecord],
    graph: &AdjacencyGraph,
    years: &[i32],
    hash: &str,
) -> Result<()> {
    let mut out = out;
    write_hash_header(&mut out, hash)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_COLUMNS)?;
    let flag = |b: bool| if b { "1" } else { "0" };
    for r in records {
        let o = &r.outcomes;
        w.write_record([
            r.child_id.as_str(),
            graph.unit_ids()[r.lga].as_str(),
            &years[r.time].to_string(),
            flag(o.bcg),
            flag(o.dpt_complete),
            flag(o.mcv1),
            flag(o.all_basic),
            flag(o.zero_dose),
            &r.dm_class.to_string(),
            &r.hc_class.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A raw questionnaire file: the rows as read plus the parsed item answers.
#[derive(Debug, Clone)]
pub struct ResponseTable {
    pub headers: csv::StringRecord,
    pub rows: Vec<csv::StringRecord>,
    pub responses: Vec<RawResponses>,
}

/// Reads raw answers. Required columns: the eight item columns and `survey_year`;
/// other columns are carried through. Empty, `NA` or `.` cells are missing.
pub fn read_responses<R: Read>(input: R) -> Result<ResponseTable> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let year = column_index(&headers, "survey_year", "responses")?;
    let dm: Vec<usize> =
        DECISION_COLUMNS.iter().map(|c| column_index(&headers, c, "responses")).collect::<Result<_>>()?;
    let hc: Vec<usize> =
        HEALTHCARE_COLUMNS.iter().map(|c| column_index(&headers, c, "responses")).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut responses = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let row = row?;
        let item = |i: usize, name: &str| -> Result<Option<u8>> {
            let v = row.get(i).unwrap_or("");
            if missing(v) {
                return Ok(None);
            }
            v.parse()
                .map(Some)
                .map_err(|_| Error::Schema(format!("responses row {}: `{name}` is not a code: `{v}`", n + 1)))
        };
        let decision = [item(dm[0], DECISION_COLUMNS[0])?, item(dm[1], DECISION_COLUMNS[1])?, item(dm[2], DECISION_COLUMNS[2])?, item(dm[3], DECISION_COLUMNS[3])?];
        let healthcare = [item(hc[0], HEALTHCARE_COLUMNS[0])?, item(hc[1], HEALTHCARE_COLUMNS[1])?, item(hc[2], HEALTHCARE_COLUMNS[2])?, item(hc[3], HEALTHCARE_COLUMNS[3])?];
        responses.push(RawResponses { survey_year: row.get(year).unwrap_or("").to_string(), decision, healthcare });
        rows.push(row);
    }
    Ok(ResponseTable { headers, rows, responses })
}

pub fn write_responses<W: Write>(out: W, responses: &[RawResponses], ids: &[String], hash: &str) -> Result<()> {
    let mut out = out;
    write_hash_header(&mut out, hash)?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["respondent_id", "survey_year"];
    header.extend(DECISION_COLUMNS);
    header.extend(HEALTHCARE_COLUMNS);
    w.write_record(&header)?;
    let code = |c: Option<u8>| c.map(|v| v.to_string()).unwrap_or_default();
    for (id, r) in ids.iter().zip(responses) {
        let mut row = vec![id.clone(), r.survey_year.clone()];
        row.extend(r.decision.iter().map(|&c| code(c)));
        row.extend(r.healthcare.iter().map(|&c| code(c)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the scored rows (complete cases only) with score and class columns appended.
pub fn write_indexed_responses<W: Write>(
    out: W,
    table: &ResponseTable,
    kept: &[usize],
    assignments: &[EmpowermentAssignment],
    hash: &str,
) -> Result<()> {
    let mut out = out;
    write_hash_header(&mut out, hash)?;
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = table.headers.iter().map(str::to_string).collect();
    header.extend(["dm_score", "hc_score", "dm_class", "hc_class"].map(String::from));
    w.write_record(&header)?;
    for (&i, a) in kept.iter().zip(assignments) {
        let mut row: Vec<String> = table.rows[i].iter().map(str::to_string).collect();
        row.extend([a.dm_score.to_string(), a.hc_score.to_string(), a.dm_class.to_string(), a.hc_class.to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-chain, per-draw rows: `chain,draw,block,v0..`. Blocks are `alpha`, the four
/// fields, `rho` and `tau` (one value per field). Short blocks leave trailing cells empty.
pub fn write_draws<W: Write>(out: W, draws: &PosteriorDraws, hash: &str) -> Result<()> {
    let mut out = out;
    write_hash_header(&mut out, hash)?;
    let n_cells = draws.n_units * draws.n_times;
    let n_alpha = draws.iter().next().map(|s| s.alpha.len()).unwrap_or(0);
    let width = n_cells.max(n_alpha).max(4);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["chain".to_string(), "draw".to_string(), "block".to_string()];
    header.extend((0..width).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for chain in &draws.chains {
        for (d, s) in chain.draws.iter().enumerate() {
            let mut emit = |block: &str, values: &[f64]| -> Result<()> {
                let mut row = vec![chain.chain.to_string(), d.to_string(), block.to_string()];
                row.extend(values.iter().map(|v| v.to_string()));
                row.resize(3 + width, String::new());
                w.write_record(&row)?;
                Ok(())
            };
            emit("alpha", &s.alpha)?;
            for f in Field::ALL {
                emit(f.name(), &s.gamma[f.index()])?;
            }
            emit("rho", &s.hyper.map(|h| h.rho))?;
            emit("tau", &s.hyper.map(|h| h.tau))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_draws<R: Read>(
    input: R,
    n_units: usize,
    n_times: usize,
    intercept: InterceptMode,
) -> Result<Vec<ChainDraws>> {
    let mut rdr = reader(input);
    let mut chains: BTreeMap<usize, Vec<ModelState>> = BTreeMap::new();
    let bad = |msg: String| Error::Schema(format!("draws: {msg}"));
    for (n, row) in rdr.records().enumerate() {
        let row = row?;
        let chain: usize = row.get(0).unwrap_or("").parse().map_err(|_| bad(format!("row {}: bad chain", n + 1)))?;
        let draw: usize = row.get(1).unwrap_or("").parse().map_err(|_| bad(format!("row {}: bad draw", n + 1)))?;
        let block = row.get(2).unwrap_or("");
        let values: Vec<f64> = row
            .iter()
            .skip(3)
            .filter(|v| !v.is_empty())
            .map(|v| v.parse().map_err(|_| bad(format!("row {}: bad value `{v}`", n + 1))))
            .collect::<Result<_>>()?;
        let states = chains.entry(chain).or_default();
        if draw == states.len() {
            states.push(ModelState::zeros(n_units, n_times, intercept));
        } else if draw + 1 != states.len() {
            return Err(bad(format!("row {}: draws out of order", n + 1)));
        }
        let s = states.last_mut().expect("pushed above");
        let expect = |len: usize| {
            if values.len() == len {
                Ok(())
            } else {
                Err(bad(format!("row {}: block `{block}` has {} values, expected {len}", n + 1, values.len())))
            }
        };
        match block {
            "alpha" => {
                expect(s.alpha.len())?;
                s.alpha = values;
            }
            "rho" | "tau" => {
                expect(4)?;
                for (h, &v) in s.hyper.iter_mut().zip(&values) {
                    if block == "rho" {
                        h.rho = v;
                    } else {
                        h.tau = v;
                    }
                }
            }
            other => {
                let f: Field = other.parse().map_err(|_| bad(format!("unknown block `{other}`")))?;
                expect(n_units * n_times)?;
                s.gamma[f.index()] = values;
            }
        }
    }
    Ok(chains.into_iter().map(|(chain, draws)| ChainDraws { chain, draws, acceptance: [None; 4] }).collect())
}

/// Fit metadata stored next to the draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub vaccine: Vaccine,
    pub seed: u64,
    pub config_hash: String,
    pub unit_ids: Vec<String>,
    pub years: Vec<i32>,
    pub intercept: InterceptMode,
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub thin: usize,
    pub n_records: usize,
    pub acceptance: Vec<[Option<f64>; 4]>,
    pub converged: bool,
    pub max_rhat: Option<f64>,
    pub rhat_threshold: f64,
    pub diagnostics: Vec<ParamDiagnostic>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

/// `(unit, year) -> pi_mean`.
pub type PredictionMap = BTreeMap<(String, i32), f64>;

/// Reads the predictions of one profile label from a predictions file.
pub fn read_predictions<R: Read>(input: R, profile: &str) -> Result<(Vaccine, PredictionMap)> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| column_index(&headers, name, "predictions");
    let (unit, year, vaccine, prof, mean) = (col("unit")?, col("year")?, col("vaccine")?, col("profile")?, col("pi_mean")?);
    let mut out = BTreeMap::new();
    let mut seen: Option<Vaccine> = None;
    for (n, row) in rdr.records().enumerate() {
        let row = row?;
        let v: Vaccine = row.get(vaccine).unwrap_or("").parse().map_err(|e: Error| Error::Schema(e.to_string()))?;
        if seen.is_some_and(|s| s != v) {
            return Err(Error::Schema("predictions file mixes vaccines".into()));
        }
        seen = Some(v);
        if row.get(prof) != Some(profile) {
            continue;
        }
        let y: i32 = row.get(year).unwrap_or("").parse().map_err(|_| Error::Schema(format!("predictions row {}: bad year", n + 1)))?;
        let p: f64 = row.get(mean).unwrap_or("").parse().map_err(|_| Error::Schema(format!("predictions row {}: bad pi_mean", n + 1)))?;
        out.insert((row.get(unit).unwrap_or("").to_string(), y), p);
    }
    let v = seen.ok_or_else(|| Error::Schema("predictions file is empty".into()))?;
    Ok((v, out))
}

/// One row per cell and profile: `unit,state,year,vaccine,profile,pi_mean,pi_sd`.
/// Profiles are `dm{d}_hc{h}` plus `marginal` when the summary carries it.
pub fn write_predictions<W: Write>(
    out: W,
    summary: &Summary,
    graph: &AdjacencyGraph,
    years: &[i32],
    vaccine: Vaccine,
    hash: &str,
) -> Result<()> {
    let mut out = out;
    write_hash_header(&mut out, hash)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["unit", "state", "year", "vaccine", "profile", "pi_mean", "pi_sd"])?;
    for c in &summary.cells {
        let unit = &graph.unit_ids()[c.unit];
        let state = &graph.state_names()[graph.state_of(c.unit)];
        let year = years[c.time].to_string();
        let labelled = Profile::all().map(|p| (p.label(), c.pi[p.index()])).chain(c.marginal.map(|m| ("marginal".to_string(), m)));
        for (label, m) in labelled {
            w.write_record([unit, state, &year, vaccine.name(), &label, &m.mean.to_string(), &m.sd.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per cell and field: `unit,state,year,vaccine,field,mean,sd,q05,q95`.
pub fn write_effects<W: Write>(
    out: W,
    summary: &Summary,
    graph: &AdjacencyGraph,
    years: &[i32],
    vaccine: Vaccine,
    hash: &str,
) -> Result<()> {
    let mut out = out;
    write_hash_header(&mut out, hash)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["unit", "state", "year", "vaccine", "field", "mean", "sd", "q05", "q95"])?;
    for c in &summary.cells {
        let unit = &graph.unit_ids()[c.unit];
        let state = &graph.state_names()[graph.state_of(c.unit)];
        let year = years[c.time].to_string();
        for f in Field::ALL {
            let g = c.gamma[f.index()];
            w.write_record([
                unit,
                state,
                &year,
                vaccine.name(),
                f.name(),
                &g.mean.to_string(),
                &g.sd.to_string(),
                &g.q05.to_string(),
                &g.q95.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Scatter data for the predicted-versus-empirical plot: `vaccine,state,year,p_hat,e_hat`
/// (`e_hat` empty where a state-wave has no children).
pub fn write_validation<W: Write>(
    out: W,
    reports: &[ValidationReport],
    graph: &AdjacencyGraph,
    years: &[i32],
    hash: &str,
) -> Result<()> {
    let mut out = out;
    write_hash_header(&mut out, hash)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["vaccine", "state", "year", "p_hat", "e_hat"])?;
    for r in reports {
        for p in &r.points {
            w.write_record([
                r.vaccine.name(),
                &graph.state_names()[p.state],
                &years[p.time].to_string(),
                &p.p_hat.to_string(),
                &p.e_hat.map(|e| e.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Pearson correlations: `vaccine,scope,pairs,r` with scope `pooled` or a survey year.
/// `r` is empty when it is undefined.
pub fn write_correlation<W: Write>(out: W, reports: &[ValidationReport], years: &[i32], hash: &str) -> Result<()> {
    let mut out = out;
    write_hash_header(&mut out, hash)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["vaccine", "scope", "pairs", "r"])?;
    let fmt = |r: Option<f64>| r.map(|v| v.to_string()).unwrap_or_default();
    for r in reports {
        w.write_record([r.vaccine.name(), "pooled", &r.pooled_pairs.to_string(), &fmt(r.pooled_r)])?;
        for (t, wave_r) in r.per_wave_r.iter().enumerate() {
            let pairs = r.points.iter().filter(|p| p.time == t && p.e_hat.is_some()).count();
            w.write_record([r.vaccine.name(), &years[t].to_string(), &pairs.to_string(), &fmt(*wave_r)])?;
        }
    }
    w.flush()?;
    Ok(())
}
