use mlcoda::sim::{
    collapse, generate, metrics, parameter_metrics, read_replications_csv, run_condition,
    write_metrics_csv, write_replications_csv, CellMetrics, ConditionGrid, DgpParams,
    EstimatePoint, PartMapping, StudyConfig,
};
use mlcoda::model::SamplerConfig;
use mlcoda::{closure, Composition64};
use proptest::prelude::*;

fn small_study(n_sim: usize) -> StudyConfig {
    StudyConfig {
        n_sim,
        grid: ConditionGrid {
            clusters: vec![20],
            cluster_sizes: vec![3],
            parts: vec![3],
            variances: vec![[1.0, 1.0]],
        },
        sampler: SamplerConfig {
            chains: 2,
            warmup: 200,
            iter: 200,
            ..SamplerConfig::default()
        },
        ..StudyConfig::default()
    }
}

proptest! {
    #[test]
    fn collapsing_commutes_with_closure(raw in prop::collection::vec(0.1f64..500.0, 5), c in 0.1f64..10.0) {
        let names: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
        for parts in 3..=5 {
            let m = PartMapping::standard(parts, &names).unwrap();
            let scaled: Vec<f64> = raw.iter().map(|v| v * c).collect();
            let x = closure(&raw, 1440.0).unwrap();
            let y = Composition64::new(
                m.apply(&closure(&scaled, 1440.0).unwrap()).unwrap().into_parts(),
                1440.0,
            ).unwrap();
            let direct = m.apply(&x).unwrap();
            for (a, b) in direct.parts().iter().zip(y.parts()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn generated_tables_have_the_requested_shape() {
    let p = DgpParams::default();
    for parts in 3..=5 {
        let sim = generate(&p, 7, 4, parts, 5).unwrap();
        assert_eq!(sim.table.len(), 28);
        assert_eq!(sim.table.n_clusters(), 7);
        assert_eq!(sim.table.dim(), parts);
        assert_eq!(sim.truth.between.len(), parts - 1);
        assert_eq!(sim.table.cluster_ids()[0], "c1");
    }
    assert_eq!(generate(&p, 3, 3, 3, 9).unwrap(), generate(&p, 3, 3, 3, 9).unwrap());
}

#[test]
fn collapsed_tables_keep_totals() {
    let sim = generate(&DgpParams::default(), 4, 2, 5, 1).unwrap();
    let names = sim.table.part_names().to_vec();
    let m = PartMapping::standard(3, &names).unwrap();
    let c = collapse(&sim.table, &m).unwrap();
    assert_eq!(c.part_names(), ["tst+wake", "mvpa+lpa", "sb"]);
    for (a, b) in c.rows().iter().zip(sim.table.rows()) {
        let p = b.composition.parts();
        assert!((a.composition.parts()[0] - (p[0] + p[1])).abs() < 1e-9);
    }
}

#[test]
fn metrics_match_a_direct_recomputation_from_csv() {
    let cfg = small_study(8);
    let cell = cfg.grid.cells()[0];
    let records = run_condition(&cell, &cfg);
    let mut buf = Vec::new();
    write_replications_csv(&records, &mut buf).unwrap();
    let back = read_replications_csv(buf.as_slice()).unwrap();
    assert_eq!(back, records);

    let summary = metrics(&back).unwrap();
    // brute force from the raw CSV text
    let text = String::from_utf8(buf).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut rows: Vec<(String, f64, f64, f64, f64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        if &rec[3] != "ok" || &rec[4] == "true" {
            continue;
        }
        let f = |i: usize| rec[i].parse::<f64>().unwrap();
        rows.push((rec[9].to_string(), f(10), f(11), f(12), f(13)));
    }
    for m in &summary.parameters {
        let mine: Vec<_> = rows.iter().filter(|r| r.0 == m.parameter).collect();
        let n = mine.len() as f64;
        let bias = mine.iter().map(|r| r.2 - r.1).sum::<f64>() / n;
        let cover = mine.iter().filter(|r| r.3 <= r.1 && r.1 <= r.4).count() as f64 / n;
        assert_eq!(m.n, mine.len());
        assert!((m.bias - bias).abs() < 1e-12);
        assert!((m.coverage - cover).abs() < 1e-12);
    }
    assert_eq!(summary.counts.replications, 8);

    let mut out = Vec::new();
    write_metrics_csv(&[CellMetrics { cell, summary: Some(summary.clone()), note: None }], &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap().lines().count(), 1 + summary.parameters.len());
}

#[test]
fn proportion_mcse_formula() {
    let pts: Vec<EstimatePoint> = (0..10)
        .map(|i| EstimatePoint {
            truth: 0.0,
            estimate: 0.0,
            ci_low: if i < 9 { -1.0 } else { 0.5 },
            ci_high: 1.0,
        })
        .collect();
    let m = parameter_metrics("x", &pts).unwrap();
    assert!((m.coverage - 0.9).abs() < 1e-12);
    assert!((m.coverage_mcse - (0.9f64 * 0.1 / 10.0).sqrt()).abs() < 1e-12);
}

#[test]
fn study_config_reads_toml_and_validates() {
    let cfg = StudyConfig::from_toml("seed = 5\nn_sim = 3\n[grid]\nclusters = [30]\ncluster_sizes = [3]\nparts = [4]\nvariances = [[1.5, 0.5]]\n").unwrap();
    assert_eq!((cfg.seed, cfg.n_sim, cfg.grid.parts[0]), (5, 3, 4));
    assert_eq!(cfg.sampler, StudyConfig::default().sampler);
    assert!(StudyConfig::from_toml("n_sim = 0\n").is_err());
    assert!(StudyConfig::from_toml("[grid]\nparts = [6]\n").is_err());
    assert_eq!(StudyConfig::paper_scale().grid.cells().len(), 240);
}
