#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use align_core::adm::AdmSpec;
use align_core::backend::{mock_backend, MockScript};
use align_core::model::{AttributeTarget, Choice, Scenario};
use align_core::registry::AttributeRegistry;
use align_core::runner::ExperimentConfig;
use align_core::structured::RepairPolicy;
use align_core::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VALUED: [&str; 6] = [
    "continuing_care",
    "fairness",
    "moral_desert",
    "protocol_focus",
    "risk_aversion",
    "utilitarianism",
];

pub fn scenario(id: &str, choices: &[&str], labels: &[(&str, &[usize])]) -> Scenario {
    Scenario {
        id: id.into(),
        domain: "medical-triage".into(),
        context: format!("Context for {id}."),
        question: "Who do you treat first?".into(),
        choices: choices
            .iter()
            .enumerate()
            .map(|(i, c)| Choice::new(i, *c))
            .collect(),
        labels: labels
            .iter()
            .map(|(k, v)| (k.to_string(), v.iter().copied().collect()))
            .collect(),
    }
}

/// The car-accident scenario: choice 0 is the thief, choice 1 the bystander.
pub fn thief_scenario() -> Scenario {
    scenario(
        "car-thief",
        &["Treat the thief first", "Treat the bystander first"],
        &[("moral_desert=high", &[1]), ("moral_desert=low", &[0])],
    )
}

/// Synthetic MTA-style dataset: each scenario labels one valued attribute,
/// with disjoint high and low choice sets.
pub fn synthetic_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenarios = (0..n)
        .map(|i| {
            let k = rng.gen_range(2..=4usize);
            let attr = VALUED[rng.gen_range(0..VALUED.len())];
            let high = rng.gen_range(0..k);
            let low = (high + rng.gen_range(1..k)) % k;
            let mut labels = BTreeMap::new();
            labels.insert(format!("{attr}=high"), BTreeSet::from([high]));
            labels.insert(format!("{attr}=low"), BTreeSet::from([low]));
            Scenario {
                id: format!("s{i:03}"),
                domain: "medical-triage".into(),
                context: format!("Synthetic situation {i}."),
                question: "What do you do?".into(),
                choices: (0..k).map(|c| Choice::new(c, format!("Option {c} of scenario {i}"))).collect(),
                labels,
            }
        })
        .collect();
    Dataset {
        id: format!("synthetic-{seed}"),
        domain: "medical-triage".into(),
        scenarios,
    }
}

pub fn write_dataset(dir: &Path, dataset: &Dataset) -> PathBuf {
    let path = dir.join(format!("{}.json", dataset.id));
    std::fs::write(&path, dataset.to_json()).unwrap();
    path
}

pub fn mock_adm(kind: &str, script: MockScript) -> AdmSpec {
    AdmSpec {
        id: format!("{kind}-mock"),
        kind: kind.into(),
        backend: mock_backend(script),
        system_prompt_override: None,
        repair: RepairPolicy::default(),
        kaleido: None,
    }
}

pub fn config(dataset: &Path, output: &Path, adm: AdmSpec, target: Option<AttributeTarget>) -> ExperimentConfig {
    ExperimentConfig {
        run_id: "test-run".into(),
        dataset: dataset.to_path_buf(),
        adm,
        target,
        filter: None,
        parallelism: 4,
        output: output.to_path_buf(),
        templates: None,
        attributes: None,
    }
}

pub fn registry() -> AttributeRegistry {
    AttributeRegistry::bundled()
}

pub fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
