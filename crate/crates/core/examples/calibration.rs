//! Point-to-point throughput, the yardstick for normalized network
//! throughput, on a clean link and on noisy ones.

use helper_core::radio::LinkModel;
use helper_core::sim::canonical;

fn main() {
    for ber in [0.0, 1e-4, 5e-4] {
        let link = LinkModel { ber: vec![ber], ..LinkModel::default() };
        let th = canonical::calibrate(&link, 0).expect("calibration runs");
        let raw = link.strategies[0].bitrate_bps as f64;
        println!("ber {ber:>7}: {th:7.1} payload bps ({:.1}% of the {raw} bps air rate)", 100.0 * th / raw);
    }
}
