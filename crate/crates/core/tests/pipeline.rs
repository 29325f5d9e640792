use std::collections::BTreeMap;

use ukt_core::filter::compile_shape_staged;
use ukt_core::oracle::verify_pool;
use ukt_core::report::{CandidateCache, PlanReport, KIND_CACHE, KIND_PLAN};
use ukt_core::workload::Extent;
use ukt_core::{
    compile_shape, compile_stage, plan_shape, sia_score, HardwareDescriptor, PlanOptions,
    ShapeSelection, TuneParams,
};

fn spec() -> std::sync::Arc<ukt_core::OperatorSpec> {
    ukt_core::workload::dense(
        Extent::Dynamic { lo: 1, hi: 128 },
        Extent::Fixed(256),
        Extent::Fixed(64),
    )
}

fn range(lo: u64, hi: u64) -> ShapeSelection {
    let mut r = BTreeMap::new();
    r.insert("i".to_string(), (lo, hi));
    ShapeSelection::Ranges(r)
}

#[test]
fn streaming_compile_matches_staged_sets() {
    let hw = HardwareDescriptor::v100_like();
    let params = TuneParams::default();
    let spec = spec();
    for i in [1, 17, 40, 53, 96] {
        let mut b = BTreeMap::new();
        b.insert("i".to_string(), i);
        let inst = spec.bind(&b).unwrap();
        let a = compile_shape(&inst, &hw, &params).unwrap();
        let s = compile_shape_staged(&inst, &hw, &params).unwrap();
        assert_eq!(a.kernels, s.kernels, "i={i}");
        assert_eq!(a.meta, s.meta, "i={i}");
        assert!(a.kernels.len() <= params.max_final);
        assert!(a
            .kernels
            .windows(2)
            .all(|w| w[0].canonical_cmp(&w[1]).is_lt()));
    }
}

#[test]
fn cache_round_trips_and_checks_its_header() {
    let hw = HardwareDescriptor::v100_like();
    let params = TuneParams::default();
    let spec = spec();
    let compiled = compile_stage(&spec, &hw, &params, &range(20, 23)).unwrap();
    let cache = CandidateCache::new(&spec, &hw, &params, &compiled);
    let text = cache.to_json();
    assert!(text.ends_with("}\n"));
    let back = CandidateCache::from_json(&text).unwrap();
    assert_eq!(back, cache);
    assert_eq!(back.to_json(), text);
    back.header.check(KIND_CACHE, &spec, &hw).unwrap();
    assert!(back.header.check(KIND_PLAN, &spec, &hw).is_err());
    let mut other = hw.clone();
    other.num_cores += 1;
    assert!(back.header.check(KIND_CACHE, &spec, &other).is_err());

    for (section, original) in back.shapes.iter().zip(&compiled) {
        let restored = section.to_candidates(&spec).unwrap();
        assert_eq!(restored.kernels, original.kernels);
        assert_eq!(restored.instance, original.instance);
    }
}

#[test]
fn plan_report_round_trips_and_restores_programs() {
    let hw = HardwareDescriptor::v100_like();
    let spec = spec();
    let mut b = BTreeMap::new();
    b.insert("i".to_string(), 53);
    let inst = spec.bind(&b).unwrap();
    let cands = compile_shape(&inst, &hw, &TuneParams::default()).unwrap();
    let options = PlanOptions::default();
    let outcome = plan_shape(&cands.kernels, &inst, &hw, &options).unwrap();
    let report = PlanReport::new(&inst, &hw, &options, cands.kernels.len(), &outcome).unwrap();
    let back = PlanReport::from_json(&report.to_json()).unwrap();
    assert_eq!(back, report);
    for entry in &back.plans {
        // Restored programs carry tiles only; scores come from the ranked plan.
        let program = back.program(&spec, entry.rank).unwrap();
        let ranked = &outcome.ranked[entry.rank - 1].plan;
        assert_eq!(program.tau, ranked.tau);
        for (a, b) in program.parts.iter().zip(&ranked.parts) {
            assert!(a.kernel.same_tiles(&b.kernel));
            assert_eq!(a.count, b.count);
        }
        let score = sia_score(ranked, &options.coeffs).unwrap();
        assert!((score - entry.sia_score).abs() <= 1e-12 * score.abs().max(1.0));
        let covered: u64 = entry
            .parts
            .iter()
            .map(|p| p.count * p.smem_tile[&back.tau])
            .sum();
        assert_eq!(covered, back.extents[&back.tau]);
    }

    let v = verify_pool(
        &cands.kernels,
        &outcome.pool,
        &options.coeffs,
        &hw,
        options.top_k,
    )
    .unwrap();
    assert!(v.passed(), "{}", v.to_text());
    assert_eq!(v.plans_checked, outcome.pool.len());
}
