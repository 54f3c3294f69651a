use vaxmap::empowerment::{build_index, class_distribution, fit_factor_model, recode_decision_items, IndexConfig};
use vaxmap::rng::{stream, Purpose};
use vaxmap::simulate::simulate_responses;

#[test]
fn full_decision_say_outscores_none() {
    let responses = simulate_responses(200, &[2018], &mut stream(51, Purpose::Responses, 0));
    let rows: Vec<Vec<f64>> = responses
        .iter()
        .map(|r| {
            let items = r.0.decision.map(Option::unwrap);
            recode_decision_items(&items).unwrap().iter().map(|&v| v as f64).collect()
        })
        .collect();
    let model = fit_factor_model(&rows).unwrap();
    assert!(model.score(&[3.0; 4]).unwrap() > model.score(&[1.0; 4]).unwrap());
}

#[test]
fn four_wave_pipeline_splits_waves_near_thirds() {
    let years = [2003, 2008, 2013, 2018];
    let responses = simulate_responses(800, &years, &mut stream(52, Purpose::Responses, 0));
    let raw: Vec<_> = responses.into_iter().map(|r| r.0).collect();
    let index = build_index(&raw, &IndexConfig::default()).unwrap();
    let waves: Vec<&str> = index.kept.iter().map(|&i| raw[i].survey_year.as_str()).collect();
    let table = class_distribution(&index.assignments, &waves);
    assert_eq!(table.len(), 4);
    for (wave, (dm, _)) in &table {
        let n: usize = dm.iter().sum();
        for &c in dm {
            let share = c as f64 / n as f64;
            assert!((0.2..0.5).contains(&share), "wave {wave}: {dm:?}");
        }
    }
}

#[test]
fn fixed_boundaries_override_tertiles() {
    let responses = simulate_responses(300, &[2013], &mut stream(53, Purpose::Responses, 0));
    let raw: Vec<_> = responses.into_iter().map(|r| r.0).collect();
    let config = IndexConfig { dm_boundaries: Some([f64::MAX, f64::MAX]), hc_boundaries: Some([f64::MIN, f64::MIN]) };
    let index = build_index(&raw, &config).unwrap();
    assert!(index.assignments.iter().all(|a| a.dm_class == 0 && a.hc_class == 2));
}
