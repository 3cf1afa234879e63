use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdtr::evaluation::{fit_method, Method, MethodSettings};
use sdtr::model_io::{ModelFile, FORMAT_VERSION};
use sdtr::shared_o::NuisanceSpec;
use sdtr::sim::{simulate_cohort, Scenario, SimConfig};

#[test]
fn every_method_round_trips_exactly() {
    let config = SimConfig::new(Scenario::One, 4);
    let sim = simulate_cohort(&config, 800, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
    let nuisance = NuisanceSpec::default();
    let (cens, prop) = nuisance.fit(&sim.dataset).unwrap();
    for method in Method::ALL {
        let model = fit_method(method, &sim.dataset, &cens, &prop, &MethodSettings::default()).unwrap();
        let file = ModelFile::new(model, nuisance.clone());
        let text = file.to_json().unwrap();
        assert!(text.contains(&format!("\"method\": \"{}\"", method.name())));
        assert_eq!(ModelFile::from_json(&text).unwrap(), file, "{method}");
    }
}

#[test]
fn rejects_foreign_or_newer_files() {
    let config = SimConfig::new(Scenario::One, 2);
    let sim = simulate_cohort(&config, 200, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let (cens, prop) = NuisanceSpec::default().fit(&sim.dataset).unwrap();
    let model = fit_method(Method::Cq, &sim.dataset, &cens, &prop, &MethodSettings::default()).unwrap();
    let text = ModelFile::new(model, NuisanceSpec::default()).to_json().unwrap();

    let newer = text.replace(
        &format!("\"version\": {FORMAT_VERSION}"),
        &format!("\"version\": {}", FORMAT_VERSION + 1),
    );
    let err = ModelFile::from_json(&newer).unwrap_err().to_string();
    assert!(err.contains("unsupported version"), "{err}");

    let foreign = text.replace("\"sdtr-model\"", "\"other\"");
    assert!(ModelFile::from_json(&foreign).unwrap_err().to_string().contains("unknown format"));
    assert!(ModelFile::from_json("{").is_err());
}
