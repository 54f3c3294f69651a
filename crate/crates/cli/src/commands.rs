use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::{json, Value};

use vaxmap::config::{hash_json, RunConfig};
use vaxmap::empowerment::{build_index, class_distribution};
use vaxmap::inference::{self, profile_weights, summarize, FitData, PosteriorDraws};
use vaxmap::io::{self, FitMeta};
use vaxmap::rng::{stream, Purpose};
use vaxmap::simulate::{grid_geojson, simulate_geography, simulate_responses, simulate_survey, TruthConfig};
use vaxmap::validate::{run_sbc, validate_vaccine, SbcConfig};
use vaxmap::{Error, Vaccine};

use crate::exit;
use crate::maps;
use crate::{FitArgs, IndexArgs, PredictArgs, SbcArgs, SimulateArgs, ValidateArgs};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::from_json(&read_text(p)?).with_context(|| p.display().to_string())?),
        None => Ok(RunConfig::default()),
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
        .map_err(Into::into)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn with_hash(value: Value, hash: &str) -> Value {
    let mut m = serde_json::Map::new();
    m.insert("config_hash".into(), json!(hash));
    match value {
        Value::Object(o) => m.extend(o),
        other => {
            m.insert("value".into(), other);
        }
    }
    Value::Object(m)
}

pub fn simulate(a: &SimulateArgs) -> Result<u8> {
    let truth_config: TruthConfig = match &a.truth_config {
        Some(p) => parse_json(p)?,
        None => TruthConfig::default(),
    };
    truth_config.validate()?;
    if a.waves == 0 || a.children_per_cell == 0 {
        return Err(Error::Invalid("--waves and --children-per-cell must be at least 1".into()).into());
    }
    let hash = hash_json(&json!({
        "units": a.units,
        "states": a.states,
        "waves": a.waves,
        "children_per_cell": a.children_per_cell,
        "seed": a.seed,
        "respondents_per_wave": a.respondents_per_wave,
        "truth": truth_config,
    }));
    let graph = simulate_geography(a.units, a.states, &mut stream(a.seed, Purpose::Geography, 0))?;
    let (records, truth) =
        simulate_survey(&graph, a.waves, &truth_config, a.children_per_cell, &mut stream(a.seed, Purpose::Survey, 0))?;

    ensure_dir(&a.out_dir)?;
    io::write_graph(&a.out_dir, &graph, &hash)?;
    io::write_records(io::create(&a.out_dir.join(io::RECORDS_FILE))?, &records, &graph, &truth.years, &hash)?;
    io::write_json(&a.out_dir.join(io::TRUTH_FILE), &with_hash(serde_json::to_value(&truth)?, &hash))?;
    if let Some(n) = a.respondents_per_wave {
        let rows: Vec<_> = simulate_responses(n, &truth.years, &mut stream(a.seed, Purpose::Responses, 0))
            .into_iter()
            .map(|r| r.0)
            .collect();
        let ids: Vec<String> = (1..=rows.len()).map(|i| format!("R{i:06}")).collect();
        io::write_responses(io::create(&a.out_dir.join(io::RESPONSES_FILE))?, &rows, &ids, &hash)?;
    }
    if a.geojson {
        io::write_json(&a.out_dir.join(io::UNITS_GEOJSON_FILE), &with_hash(grid_geojson(&graph), &hash))?;
    }
    println!(
        "simulated {} units in {} states over {} waves ({}-{}), {} children -> {}",
        graph.n_units(),
        graph.n_states(),
        a.waves,
        truth.years[0],
        truth.years[a.waves - 1],
        records.len(),
        a.out_dir.display()
    );
    Ok(exit::OK)
}

pub fn index(a: &IndexArgs) -> Result<u8> {
    let config = load_config(a.config.as_deref())?;
    let hash = config.hash();
    let table = io::read_responses(io::open(&a.input)?).with_context(|| a.input.display().to_string())?;
    let index = build_index(&table.responses, &config.index)?;
    if let Some(parent) = a.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    io::write_indexed_responses(io::create(&a.output)?, &table, &index.kept, &index.assignments, &hash)?;

    let waves: Vec<&str> = index.kept.iter().map(|&i| table.responses[i].survey_year.as_str()).collect();
    let dist = class_distribution(&index.assignments, &waves);
    println!(
        "scored {} of {} respondents ({} incomplete) -> {}",
        index.kept.len(),
        table.responses.len(),
        table.responses.len() - index.kept.len(),
        a.output.display()
    );
    println!("{:<8}{:>7}  {:>8}{:>8}{:>8}  {:>8}{:>8}{:>8}", "wave", "n", "DM not", "DM mod", "DM high", "HC not", "HC mod", "HC high");
    for (wave, (dm, hc)) in &dist {
        let n: usize = dm.iter().sum();
        let pct = |c: usize| format!("{:.1}%", 100.0 * c as f64 / n as f64);
        println!(
            "{wave:<8}{n:>7}  {:>8}{:>8}{:>8}  {:>8}{:>8}{:>8}",
            pct(dm[0]),
            pct(dm[1]),
            pct(dm[2]),
            pct(hc[0]),
            pct(hc[1]),
            pct(hc[2])
        );
    }
    Ok(exit::OK)
}

pub fn fit(a: &FitArgs) -> Result<u8> {
    let vaccine: Vaccine = a.vaccine.parse()?;
    let mut config = load_config(a.config.as_deref())?;
    let s = &mut config.sampler;
    s.chains = a.chains.unwrap_or(s.chains);
    s.seed = a.seed.unwrap_or(s.seed);
    s.warmup = a.warmup.unwrap_or(s.warmup);
    s.draws = a.draws.unwrap_or(s.draws);
    s.thin = a.thin.unwrap_or(s.thin);
    config.validate()?;
    let hash = config.hash();

    let graph = io::read_graph(&a.data_dir)?;
    let set = io::read_records(io::open(&a.data_dir.join(io::RECORDS_FILE))?, &graph)?;
    let data = FitData::new(&graph, set.n_times(), &set.records, vaccine, config.model.island_mode)?;
    let result = inference::fit(&data, &config)?;

    ensure_dir(&a.out_dir)?;
    io::write_json(&a.out_dir.join(io::FIT_CONFIG_FILE), &config)?;
    io::write_draws(io::create(&a.out_dir.join(io::DRAWS_FILE))?, &result.draws, &hash)?;
    let meta = FitMeta {
        vaccine,
        seed: config.sampler.seed,
        config_hash: hash,
        unit_ids: graph.unit_ids().to_vec(),
        years: set.years.clone(),
        intercept: config.model.intercept,
        chains: config.sampler.chains,
        warmup: config.sampler.warmup,
        draws: config.sampler.draws,
        thin: config.sampler.thin,
        n_records: set.records.len(),
        acceptance: result.draws.chains.iter().map(|c| c.acceptance).collect(),
        converged: result.converged,
        max_rhat: result.max_rhat,
        rhat_threshold: config.sampler.rhat_threshold,
        diagnostics: result.diagnostics,
    };
    io::write_json(&a.out_dir.join(io::META_FILE), &meta)?;

    let rhat = meta.max_rhat.map(|r| format!("{r:.3}")).unwrap_or_else(|| "n/a".into());
    println!(
        "fit {vaccine}: {} records, {} chains x {} draws, max R-hat {rhat} -> {}",
        meta.n_records,
        meta.chains,
        result.draws.n_draws() / meta.chains,
        a.out_dir.display()
    );
    if !meta.converged {
        eprintln!("warning: max R-hat {rhat} exceeds {}; draws written but not converged", meta.rhat_threshold);
        return Ok(exit::NOT_CONVERGED);
    }
    Ok(exit::OK)
}

pub fn predict(a: &PredictArgs) -> Result<u8> {
    for name in [io::META_FILE, io::DRAWS_FILE, io::FIT_CONFIG_FILE] {
        if !a.fit_dir.join(name).is_file() {
            return Err(Error::Invalid(format!(
                "{}: no fit artifacts ({name} missing); run `vaxmap fit` first",
                a.fit_dir.display()
            ))
            .into());
        }
    }
    let meta: FitMeta = io::read_json(&a.fit_dir.join(io::META_FILE))?;
    let config = load_config(Some(&a.fit_dir.join(io::FIT_CONFIG_FILE)))?;
    let mismatch = |what: String| -> anyhow::Error { Error::ConfigMismatch(what).into() };
    if config.hash() != meta.config_hash {
        return Err(mismatch(format!("{} does not match {}", io::FIT_CONFIG_FILE, io::META_FILE)));
    }
    let draws_path = a.fit_dir.join(io::DRAWS_FILE);
    if io::read_hash_header(&draws_path)?.as_deref() != Some(meta.config_hash.as_str()) {
        return Err(mismatch(format!("{} was not written by this fit", draws_path.display())));
    }
    if let Some(p) = &a.config {
        let given = load_config(Some(p))?.hash();
        if given != meta.config_hash {
            return Err(mismatch(format!(
                "{} hashes to {given}, but the fit in {} ran with {}",
                p.display(),
                a.fit_dir.display(),
                meta.config_hash
            )));
        }
    }
    let hash = meta.config_hash.clone();

    let graph = io::read_graph(&a.data_dir)?;
    let set = io::read_records(io::open(&a.data_dir.join(io::RECORDS_FILE))?, &graph)?;
    if graph.unit_ids() != meta.unit_ids.as_slice() || set.years != meta.years {
        return Err(mismatch(format!("units or survey years in {} differ from the fitted data", a.data_dir.display())));
    }
    let (n_units, n_times) = (graph.n_units(), set.n_times());
    let chains = io::read_draws(io::open(&draws_path)?, n_units, n_times, meta.intercept)?;
    let draws = PosteriorDraws {
        n_units,
        n_times,
        intercept: meta.intercept,
        seed: meta.seed,
        warmup: meta.warmup,
        thin: meta.thin,
        chains,
    };
    let weights = profile_weights(&set.records, n_times)?;
    let summary = summarize(&draws, Some(&weights))?;

    let out_dir = a.out_dir.as_deref().unwrap_or(&a.fit_dir);
    ensure_dir(out_dir)?;
    let vaccine = meta.vaccine;
    io::write_predictions(io::create(&out_dir.join(io::PREDICTIONS_FILE))?, &summary, &graph, &set.years, vaccine, &hash)?;
    io::write_effects(io::create(&out_dir.join(io::EFFECTS_FILE))?, &summary, &graph, &set.years, vaccine, &hash)?;

    let mut extras = String::new();
    if let Some(path) = &a.geojson {
        let mut collection: Value = parse_json(path)?;
        let stats = maps::statistics(&summary);
        let shapes = if a.svg { Some(maps::UnitShapes::from_geojson(&collection, &a.id_property, &graph)?) } else { None };
        let unmatched = maps::join(&mut collection, &a.id_property, &graph, &set.years, &stats, vaccine.name(), &hash)?;
        if unmatched > 0 {
            eprintln!("warning: {unmatched} features in {} match no unit", path.display());
        }
        io::write_json(&out_dir.join(io::PREDICTIONS_GEOJSON_FILE), &collection)?;
        extras.push_str(", geojson");
        if let Some(shapes) = shapes {
            let map_dir = out_dir.join("maps");
            ensure_dir(&map_dir)?;
            let rendered = maps::render_all(
                &shapes,
                &stats,
                &set.years,
                n_units,
                vaccine.name(),
                &config.maps,
                &hash,
            );
            for (name, svg) in &rendered {
                let p = map_dir.join(name);
                fs::write(&p, svg).with_context(|| format!("writing {}", p.display()))?;
            }
            extras.push_str(&format!(", {} maps", rendered.len()));
        }
    }
    println!(
        "predicted {vaccine} for {} units x {} waves from {} draws{extras} -> {}",
        n_units,
        n_times,
        draws.n_draws(),
        out_dir.display()
    );
    Ok(exit::OK)
}

pub fn validate(a: &ValidateArgs) -> Result<u8> {
    let mut hash = match &a.config {
        Some(p) => Some(load_config(Some(p))?.hash()),
        None => None,
    };
    let graph = io::read_graph(&a.data_dir)?;
    let set = io::read_records(io::open(&a.data_dir.join(io::RECORDS_FILE))?, &graph)?;
    let mut reports = Vec::new();
    for dir in &a.pred_dir {
        let path = dir.join(io::PREDICTIONS_FILE);
        let found = io::read_hash_header(&path)?
            .ok_or_else(|| Error::Schema(format!("{}: no config hash header", path.display())))?;
        match &hash {
            Some(h) if *h != found => {
                return Err(Error::ConfigMismatch(format!(
                    "{} was produced with config {found}, expected {h}",
                    path.display()
                ))
                .into())
            }
            Some(_) => {}
            None => hash = Some(found),
        }
        let (vaccine, pi) = io::read_predictions(io::open(&path)?, "marginal")?;
        if reports.iter().any(|r: &vaxmap::validate::ValidationReport| r.vaccine == vaccine) {
            return Err(Error::Invalid(format!("{vaccine} predictions given twice")).into());
        }
        let pi_hat: Vec<Option<f64>> = set
            .years
            .iter()
            .flat_map(|&y| graph.unit_ids().iter().map(move |u| (u.clone(), y)))
            .map(|key| pi.get(&key).copied())
            .collect();
        reports.push(validate_vaccine(&pi_hat, &set.records, &graph, set.n_times(), vaccine)?);
    }
    let hash = hash.expect("at least one prediction directory");

    ensure_dir(&a.out_dir)?;
    io::write_validation(io::create(&a.out_dir.join(io::VALIDATION_FILE))?, &reports, &graph, &set.years, &hash)?;
    io::write_correlation(io::create(&a.out_dir.join(io::CORRELATION_FILE))?, &reports, &set.years, &hash)?;
    let fmt = |r: Option<f64>| r.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into());
    for r in &reports {
        let waves: Vec<String> = set.years.iter().zip(&r.per_wave_r).map(|(y, v)| format!("{y} {}", fmt(*v))).collect();
        println!(
            "{:<13} pooled r {} over {} state-waves; by wave: {}",
            r.vaccine.name(),
            fmt(r.pooled_r),
            r.pooled_pairs,
            waves.join(", ")
        );
    }
    Ok(exit::OK)
}

pub fn sbc(a: &SbcArgs) -> Result<u8> {
    let mut config: SbcConfig = match &a.config {
        Some(p) => parse_json(p)?,
        None => SbcConfig::default(),
    };
    config.replications = a.replications.unwrap_or(config.replications);
    config.seed = a.seed.unwrap_or(config.seed);
    config.freeze_auxiliary |= a.freeze_auxiliary;
    let hash = hash_json(&config);
    let report = run_sbc(&config)?;

    ensure_dir(&a.out_dir)?;
    let doc = json!({ "config_hash": hash, "config": config, "report": report });
    io::write_json(&a.out_dir.join(io::SBC_FILE), &doc)?;
    for p in &report.parameters {
        println!("{:<16} chi-square {:>8.2}  p {:.4}", p.name, p.chi_square, p.p_value);
    }
    println!(
        "{} replications: ranks {} at the 1% level -> {}",
        report.replications,
        if report.uniform(0.01) { "uniform" } else { "NOT uniform" },
        a.out_dir.display()
    );
    Ok(exit::OK)
}
