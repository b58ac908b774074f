//! Checks shared by the fuzz targets and the corpus replay test.

use ppr_cert::analysis::parse_jsonl;
use ppr_cert::graph::{parse_edge_list, LoadOptions, ScenarioDump};
use ppr_cert::lp_solver::{lp_to_text, parse_lp_text, parse_solution};
use ppr_cert::models::{parse_labels, FeatureMatrix, LogitsMatrix, MlpModel};
use ppr_cert::PerturbationScenario;
use ppr_cert_cli::{Manifest, RunConfig};

pub fn edge_list(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    for symmetrize in [false, true] {
        let options = LoadOptions { symmetrize, ..LoadOptions::default() };
        if let Ok(loaded) = parse_edge_list(text, &options) {
            assert_eq!(loaded.graph.node_count(), loaded.original_ids.len());
        }
    }
}

pub fn labels(data: &[u8]) {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_labels(text);
    }
}

pub fn logits_csv(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(h) = LogitsMatrix::parse_csv(text) {
        let again = LogitsMatrix::parse_csv(&h.to_csv()).expect("written logits parse");
        assert_eq!((again.nodes(), again.classes()), (h.nodes(), h.classes()));
    }
}

pub fn features_csv(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(x) = FeatureMatrix::parse_csv(text) {
        let again = FeatureMatrix::parse_binary(&x.to_binary()).expect("binary round trip");
        assert_eq!((again.nodes(), again.dims()), (x.nodes(), x.dims()));
    }
}

pub fn features_bin(data: &[u8]) {
    if let Ok(x) = FeatureMatrix::parse_binary(data) {
        assert_eq!(x.to_binary(), data);
    }
}

pub fn lp_text(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(lp) = parse_lp_text(text) {
        if let Ok(written) = lp_to_text(&lp) {
            let again = parse_lp_text(&written).expect("written LP parses");
            assert_eq!((again.var_count(), again.row_count()), (lp.var_count(), lp.row_count()));
        }
    }
}

const LP: &str = "Maximize\n obj: x + 2 y\nSubject To\n c1: x + y <= 1\nBounds\n x <= 1\nEnd\n";

pub fn solution(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let lp = parse_lp_text(LP).expect("fixed LP parses");
    let _ = parse_solution(text, &lp);
}

pub fn scenario_dump(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(dump) = ScenarioDump::parse(text) {
        if let Ok(s) = PerturbationScenario::from_dump(&dump) {
            assert_eq!(s.to_dump(), dump);
        }
    }
}

pub fn certificates(data: &[u8]) {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_jsonl(text);
    }
}

pub fn checkpoint(data: &[u8]) {
    if let Ok(model) = MlpModel::from_checkpoint(data) {
        assert_eq!(model.to_checkpoint(), data);
    }
}

pub fn config(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = RunConfig::parse(text, &[]) {
        let again = RunConfig::parse(&config.to_toml(), &[]).expect("written config parses");
        assert_eq!(again, config);
    }
}

pub fn manifest(data: &[u8]) {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = Manifest::parse(text);
    }
}
