//! Lists every individually stable partition of a scenario file (default:
//! the bundled nine-agent fixture) with its group-size profile.
//!
//! Usage: `ise_census [SCENARIO] [LAMBDA]`

use std::path::PathBuf;

use groupform::model::GameConfig;
use groupform::oracle::enumerate_all_ise;
use groupform::persistence::{example2_scenario, load_scenario};

fn main() {
    let scenario = match std::env::args().nth(1).filter(|p| p != "-") {
        Some(p) => load_scenario(&PathBuf::from(p)).expect("scenario"),
        None => example2_scenario(),
    };
    let lambda: f64 = std::env::args()
        .nth(2)
        .map(|v| v.parse().expect("lambda"))
        .unwrap_or(1.0);
    let cfg = GameConfig::new(scenario.k(), lambda).unwrap();
    let all = enumerate_all_ise(&scenario, &cfg).expect("enumeration");
    println!("{} stable partitions", all.len());
    for p in &all {
        let mut sizes: Vec<usize> = p.canonical().iter().map(Vec::len).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        println!("{sizes:?}  {p}");
    }
}
