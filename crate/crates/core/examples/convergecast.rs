//! Two sources reporting to the ERC until the first battery runs out: the
//! backpressure utility spreads relaying across paths, greedy forwarding
//! drains one relay.

use helper_core::sim::battery::residual_curve;
use helper_core::sim::canonical;
use helper_core::sim::metrics::network_lifetime;
use helper_core::sim::Simulator;
use helper_core::RoutingMode;

fn main() {
    let run = |mode| {
        let mut sc = canonical::convergecast_scenario(mode, 0);
        sc.stop_at_first_death = true;
        Simulator::run(sc).expect("valid scenario")
    };
    let (seek, greedy) = (run(RoutingMode::Seek), run(RoutingMode::Greedy));
    let (a, b) = (residual_curve(&seek), residual_curve(&greedy));
    println!("{:>5} {:>10} {:>10}", "min", "seek J", "greedy J");
    for i in 0..a.len().max(b.len()) {
        let cell = |c: &[(helper_core::SimTime, f64)]| c.get(i).map_or("-".to_string(), |p| format!("{:.2}", p.1));
        let t = a.get(i).or(b.get(i)).unwrap().0;
        println!("{:>5.0} {:>10} {:>10}", t.as_secs_f64() / 60.0, cell(&a), cell(&b));
    }
    let (ls, lg) = (network_lifetime(&seek), network_lifetime(&greedy));
    println!("lifetime: seek {ls}, greedy {lg} ({:.2}x)", ls.as_secs_f64() / lg.as_secs_f64());
}
