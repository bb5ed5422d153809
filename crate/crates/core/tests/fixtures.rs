use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use lossforge::extraction::{budget, extract};
use lossforge::io::{read_json, read_modes_csv};
use lossforge::participation::{FactorModel, ParticipationMatrix};
use lossforge::prediction::Library;

fn dir(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

fn json_files(rel: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir(rel))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    v.sort();
    v
}

#[test]
fn every_participation_matrix_loads() {
    let files = json_files("participations");
    assert!(files.len() >= 10);
    for p in files {
        let m: ParticipationMatrix = read_json(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert!(!m.modes().is_empty() && !m.channels().is_empty(), "{}", p.display());
    }
}

#[test]
fn libraries_parse_with_provenance() {
    for p in json_files("library").into_iter().filter(|p| !p.ends_with("catalog.json")) {
        let lib: Library = read_json(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        for (id, entry) in &lib {
            entry.factor.validate().unwrap();
            assert!(!entry.provenance.is_empty(), "{}: '{id}' has no provenance", p.display());
        }
    }
}

#[test]
fn catalog_parses_as_nested_factors() {
    let cat: BTreeMap<String, BTreeMap<String, FactorModel>> = read_json(&dir("library/catalog.json")).unwrap();
    assert!(cat.contains_key("surface") && cat.contains_key("bulk"));
    for group in cat.values() {
        for f in group.values() {
            f.validate().unwrap();
        }
    }
}

#[test]
fn every_library_covers_its_device() {
    let pairs = [
        ("hairpin_stripline", "hairpin_ta_hemex"),
        ("transmon_al", "transmon_al_hem"),
        ("transmon_ta", "transmon_ta_efg"),
    ];
    for (device, lib) in pairs {
        let m: ParticipationMatrix = read_json(&dir(&format!("participations/{device}.json"))).unwrap();
        let l: Library = read_json(&dir(&format!("library/{lib}.json"))).unwrap();
        for c in m.channels() {
            assert!(l.contains_key(&c.id), "{lib} lacks '{}' needed by {device}", c.id);
        }
    }
}

#[test]
fn each_bf22_dataset_extracts_positive_factors() {
    let m: ParticipationMatrix = read_json(&dir("participations/bf22_tslv2.json")).unwrap();
    let fixed: BTreeMap<String, FactorModel> = read_json(&dir("fixed/package.json")).unwrap();
    for k in 1..=4 {
        let modes = read_modes_csv(&dir(&format!("modes/bf22_tsl{k}.csv"))).unwrap();
        let set = extract(&m, &modes, &fixed).unwrap();
        for (id, f) in &set.factors {
            assert!(f.value > 0.0, "TSL{k} {id} = {}", f.value);
        }
        let b = budget(&m, &set).unwrap();
        for (mb, rec) in b.modes.iter().zip(&modes) {
            // Three free channels, three modes: the fit is exact.
            assert!((mb.total_loss * rec.q_int - 1.0).abs() < 1e-9, "TSL{k} {}", mb.mode_id);
        }
    }
}
