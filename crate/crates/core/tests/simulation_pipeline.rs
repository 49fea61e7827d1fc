use proptest::prelude::*;
use riskprobe_core::agents::{agent_seed, simulate_hl, simulate_mps, simulate_population, AgentSpec, UtilityFamily};
use riskprobe_core::analysis::{analyze, consistency_report, pattern_table, summarize};
use riskprobe_core::choice::{ChoicePattern, Pick};
use riskprobe_core::geometry::{classify_point, NormalizedUtilityPoint, Region};
use riskprobe_core::records::{read_csv, read_jsonl, write_csv, write_jsonl};
use riskprobe_core::tasks::{hl_battery, paper_battery};

const MARGIN: f64 = 1e-6;

// distance from the two boundary lines
fn clearance(u1: f64, u2: f64) -> f64 {
    let d1 = (4.0 * u1 - 3.0 * u2).abs() / 5.0;
    let d2 = (9.0 * u2 - 7.0 * u1 - 2.0).abs() / 130f64.sqrt();
    d1.min(d2)
}

fn tabulated(u1: f64, u2: f64) -> UtilityFamily<f64> {
    UtilityFamily::Tabulated {
        values: vec![0.0, u1, u2, 1.0],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn zero_tremble_agents_reveal_their_region(a in 0.0f64..=1.0, b in 0.0f64..=1.0, scale in 0.1f64..100.0, shift in -50.0f64..50.0) {
        let (u1, u2) = if a <= b { (a, b) } else { (b, a) };
        prop_assume!(clearance(u1, u2) >= MARGIN);
        let region = classify_point(&NormalizedUtilityPoint::new(u1, u2).unwrap());
        // an affine transform of the utility must not change behaviour
        let values = [0.0, u1, u2, 1.0].map(|v| shift + scale * v).to_vec();
        let spec = AgentSpec::new(UtilityFamily::Tabulated { values }, 0.0, 3).unwrap();
        let patterns = simulate_mps(&spec, &paper_battery()).unwrap();
        prop_assert_eq!(patterns, vec![region.pattern(); 6]);
    }

    #[test]
    fn increasing_utilities_switch_once(steps in proptest::collection::vec(0.001f64..10.0, 3), seed in any::<u64>()) {
        let values = vec![0.0, steps[0], steps[0] + steps[1], steps[0] + steps[1] + steps[2]];
        let spec = AgentSpec::new(UtilityFamily::Tabulated { values }, 0.0, seed).unwrap();
        let recs = simulate_population("p", std::slice::from_ref(&spec), &paper_battery(), &hl_battery()).unwrap();
        let hl: Vec<Pick> = recs.iter().filter(|r| r.part == 1).map(|r| r.chosen).collect();
        let s = simulate_hl(&spec, &hl_battery()).unwrap() as usize;
        prop_assert!(s <= 9);
        prop_assert!(hl[..s].iter().all(|&p| p == Pick::Safe));
        prop_assert!(hl[s..].iter().all(|&p| p == Pick::Risky));
    }
}

fn region_agent(region: Region) -> UtilityFamily<f64> {
    match region {
        Region::Red => tabulated(0.6, 0.7),
        Region::Yellow => tabulated(0.3, 0.8),
        Region::Green => tabulated(0.3, 0.35),
        Region::Blue => tabulated(0.1, 0.2),
    }
}

#[test]
fn population_in_ratio_three_two_four_one_is_recovered() {
    let mut specs = Vec::new();
    for (region, n) in [(Region::Red, 30), (Region::Yellow, 20), (Region::Green, 40), (Region::Blue, 10)] {
        for _ in 0..n {
            let i = specs.len();
            specs.push(AgentSpec::new(region_agent(region), 0.0, agent_seed(11, i)).unwrap());
        }
    }
    let recs = simulate_population("mix", &specs, &paper_battery(), &hl_battery()).unwrap();
    assert_eq!(recs.len(), 100 * 22);
    let report = analyze(&recs);
    assert!(report.notes.is_empty());
    assert_eq!(report.pooled_counts, [180, 120, 240, 60]);
    for row in &report.pattern_table.counts {
        assert_eq!(*row, [30, 20, 40, 10]);
    }
    assert_eq!(report.consistency.perfectly_consistent, 100);

    // yellow and green agents spread across price-list groups with no (A,A)
    let sums = summarize(&recs);
    let yg: Vec<_> = sums
        .subjects
        .iter()
        .filter(|s| s.patterns.values().all(|p| matches!(p, ChoicePattern::BA | ChoicePattern::AC)))
        .collect();
    assert_eq!(yg.len(), 60);
    let groups: std::collections::BTreeSet<u32> = yg.iter().filter_map(|s| s.hl_safe_count).collect();
    assert!(groups.len() >= 2, "{groups:?}");
    assert!(yg.iter().all(|s| s.count(ChoicePattern::AA) == 0));
}

#[test]
fn crra_population_lands_in_one_group() {
    let specs: Vec<AgentSpec> = (0..100)
        .map(|i| AgentSpec::new(UtilityFamily::Crra { r: 0.5 }, 0.0, agent_seed(5, i)).unwrap())
        .collect();
    let report = analyze(&simulate_population("crra", &specs, &paper_battery(), &hl_battery()).unwrap());
    assert_eq!(report.pooled_shares, [1.0, 0.0, 0.0, 0.0]);
    assert_eq!(report.hl_histogram[6], 100);
    assert_eq!(report.hl_cross_tab.groups.len(), 1);
    assert_eq!(report.hl_cross_tab.groups[0].aa_share, riskprobe_core::scalar::ratio(1, 1));
}

#[test]
fn green_and_yellow_population_spreads_over_price_list() {
    let mut specs = Vec::new();
    for i in 0..100usize {
        // a diagonal point (d, d) picks the price-list triangle; green agents
        // sit just above it, yellow agents near the (0, 1) corner on the ray to it
        let d = ((i / 2) % 10) as f64 / 10.0 + 0.05;
        let (u, region) = if i % 2 == 0 {
            ((d, d + 0.002), Region::Green)
        } else {
            ((0.2 * d, 0.8 + 0.2 * d), Region::Yellow)
        };
        let pt = NormalizedUtilityPoint::new(u.0, u.1).unwrap();
        assert_eq!(classify_point(&pt), region, "{u:?}");
        specs.push(AgentSpec::new(tabulated(u.0, u.1), 0.0, agent_seed(8, i)).unwrap());
    }
    let report = analyze(&simulate_population("gy", &specs, &paper_battery(), &hl_battery()).unwrap());
    assert_eq!(report.pooled_counts[0], 0);
    assert_eq!(report.hl_histogram[..10], [10; 10]);
}

#[test]
fn trembling_population_approaches_uniform_choice() {
    let n = 4_000;
    let specs: Vec<AgentSpec> = (0..n)
        .map(|i| AgentSpec::new(UtilityFamily::Crra { r: 0.5 }, 0.999, agent_seed(21, i)).unwrap())
        .collect();
    let recs = simulate_population("noise", &specs, &paper_battery(), &[]).unwrap();
    let sums = summarize(&recs);
    let table = pattern_table(&sums);
    let total = table.total_choices() as f64;
    let se = (0.25f64 * 0.75 / total).sqrt();
    for share in table.pooled_shares() {
        assert!((share - 0.25).abs() < 4.0 * se, "{share}");
    }
    let rep = consistency_report(&sums);
    let perfect = 4.0 * 0.25f64.powi(6);
    let majority = 616.0 / 4096.0;
    for (count, p) in [(rep.perfectly_consistent, perfect), (rep.majority_consistent, majority)] {
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let observed = count as f64 / n as f64;
        assert!((observed - p).abs() < 4.0 * se, "{observed} vs {p}");
    }
}

#[test]
fn simulated_records_survive_both_encodings() {
    let specs: Vec<AgentSpec> = (0..5)
        .map(|i| AgentSpec::new(UtilityFamily::Cara { a: 0.1 }, 0.2, agent_seed(1, i)).unwrap())
        .collect();
    let recs = simulate_population("enc", &specs, &paper_battery(), &hl_battery()).unwrap();
    let mut csv = Vec::new();
    write_csv(&mut csv, &recs).unwrap();
    assert_eq!(read_csv(csv.as_slice()).unwrap(), recs);
    let mut jsonl = Vec::new();
    write_jsonl(&mut jsonl, &recs).unwrap();
    assert_eq!(read_jsonl(jsonl.as_slice()).unwrap(), recs);
    assert_eq!(analyze(&recs), analyze(&read_csv(csv.as_slice()).unwrap()));
}
