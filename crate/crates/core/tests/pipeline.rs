use credlife::boosting::{fit_gbm, BoostModel, BoostParams};
use credlife::eval::{run_rolling_origin, write_report, ExperimentPlan, ModelKind};
use credlife::forest::{fit_forest, ForestModel, ForestParams};
use credlife::panel::{assemble_design, ingest_panel, CohortSpec, DesignMatrix, DesignOptions, VariableCatalog};
use credlife::synth::{generate_panel, HazardTable, SynthConfig};

fn small_config() -> SynthConfig {
    SynthConfig {
        n_persons: 3000,
        years: (2004, 2010),
        catalog: VariableCatalog::synthetic(1, 1),
        base_hazard: HazardTable::new(vec![(0, 60, 0.01), (61, 120, 0.06)]).unwrap(),
        signal_strength: 1.0,
        ..SynthConfig::default()
    }
}

#[test]
fn csv_round_trip_preserves_panel() {
    let cfg = small_config();
    let panel = generate_panel(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    panel
        .write_csv(&cfg.catalog, std::fs::File::create(&path).unwrap(), Some("config_digest=test"))
        .unwrap();
    let cat_path = dir.path().join("catalog.csv");
    cfg.catalog.write_csv(std::fs::File::create(&cat_path).unwrap()).unwrap();
    let catalog = VariableCatalog::load(&cat_path).unwrap();
    assert_eq!(catalog, cfg.catalog);
    let back = ingest_panel(&[&path], &catalog).unwrap();
    assert_eq!(back.n_snapshots(), panel.n_snapshots());
    let a = assemble_design(&panel, &catalog, 2010, 4, DesignOptions::default()).unwrap();
    let b = assemble_design(&back, &catalog, 2010, 4, DesignOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn design_cache_and_model_files_round_trip() {
    let cfg = small_config();
    let panel = generate_panel(&cfg).unwrap();
    let design = assemble_design(&panel, &cfg.catalog, 2009, 3, DesignOptions { missing_indicators: true }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("design.bin");
    design.save(&cache).unwrap();
    assert_eq!(DesignMatrix::load(&cache).unwrap(), design);

    let gb = fit_gbm(&design, &BoostParams { n_rounds: 20, ..BoostParams::default() }).unwrap();
    let gb_path = dir.path().join("gb.bin");
    gb.save(&gb_path).unwrap();
    let gb_back = BoostModel::load(&gb_path).unwrap();
    assert_eq!(gb_back.predict_design(&design).unwrap(), gb.predict_design(&design).unwrap());

    let rf = fit_forest(&design, &ForestParams { n_trees: 8, ..ForestParams::default() }).unwrap();
    let rf_path = dir.path().join("rf.bin");
    rf.save(&rf_path).unwrap();
    let rf_back = ForestModel::load(&rf_path).unwrap();
    assert_eq!(rf_back, rf);
    assert_eq!(rf_back.predict_design(&design).unwrap(), rf.predict_design(&design).unwrap());
}

#[test]
fn model_rejects_design_with_other_columns() {
    let cfg = small_config();
    let panel = generate_panel(&cfg).unwrap();
    let train = assemble_design(&panel, &cfg.catalog, 2009, 3, DesignOptions::default()).unwrap();
    let other = assemble_design(&panel, &cfg.catalog, 2010, 2, DesignOptions::default()).unwrap();
    let gb = fit_gbm(&train, &BoostParams { n_rounds: 5, ..BoostParams::default() }).unwrap();
    assert!(gb.predict_design(&other).is_err());
}

#[test]
fn rolling_origin_report_has_one_row_per_cell() {
    let cfg = small_config();
    let panel = generate_panel(&cfg).unwrap();
    let mut plan = ExperimentPlan {
        test_years: vec![2009, 2010],
        models: ModelKind::ALL.to_vec(),
        cohorts: CohortSpec::parse("18-60,61-120").unwrap(),
        ..ExperimentPlan::default()
    };
    plan.forest.n_trees = 10;
    plan.boost.n_rounds = 20;
    let report = run_rolling_origin(&panel, &cfg.catalog, &plan).unwrap();
    assert_eq!(report.auc.len(), 2 * 2 * ModelKind::ALL.len());
    assert_eq!(report.audit.len(), 2);
    for a in &report.audit {
        assert_eq!(a.train_target_year + 1, a.test_year);
    }
    for year in [2009, 2010] {
        for cohort in ["18-60", "61-120"] {
            for m in ModelKind::ALL {
                assert!(report.auc_of(year, cohort, m).is_some(), "{year} {cohort} {m}");
            }
        }
    }
    let old = report.auc_of(2010, "61-120", ModelKind::CreditGb).unwrap();
    assert!(old.auc.unwrap() > 0.55, "{old:?}");
    assert!(report.delong_of(2010, "61-120", ModelKind::CreditRf).is_some());

    let dir = tempfile::tempdir().unwrap();
    write_report(&report, dir.path()).unwrap();
    let auc = std::fs::read_to_string(dir.path().join("auc_table.csv")).unwrap();
    let mut lines = auc.lines();
    assert_eq!(lines.next().unwrap(), format!("# config_digest={}", report.config_digest));
    assert_eq!(lines.next().unwrap(), "year,cohort,model,auc,n_pos,n_neg,p_value_vs_age");
    assert_eq!(lines.count(), report.auc.len());
    let delong: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("delong.json")).unwrap()).unwrap();
    assert_eq!(delong["config_digest"], report.config_digest.as_str());
    assert!(dir.path().join("roc_2010_61-120_credit_gb.csv").exists());
}

#[test]
fn infeasible_first_year_is_rejected() {
    let cfg = small_config();
    let panel = generate_panel(&cfg).unwrap();
    let plan = ExperimentPlan {
        test_years: vec![2005],
        models: vec![ModelKind::Age],
        ..ExperimentPlan::default()
    };
    let err = run_rolling_origin(&panel, &cfg.catalog, &plan).unwrap_err();
    assert!(err.to_string().contains("2005"), "{err}");
}
