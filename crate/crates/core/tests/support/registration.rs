//! Shift recovery rate on simulated captures.

use cdp_core::align::{register, AlignConfig};
use cdp_core::channel::{acquire, print_instance, DeviceProfile, PrinterProfile};
use cdp_core::imgcore::generate_template;

/// Fractions of exact and within-one-pixel recoveries over `n` trials.
pub fn recovery(
    device: &DeviceProfile,
    printers: &[PrinterProfile],
    n: u64,
    seed: u64,
) -> (f64, f64) {
    let cfg = AlignConfig::default();
    let (mut exact, mut near) = (0, 0);
    for i in 0..n {
        let t = generate_template(seed + i, 64, 64, 0.5).unwrap();
        let printer = &printers[i as usize % printers.len()];
        let inst = print_instance(&t, printer, 0, seed + 10_000 + i).unwrap();
        let cap = acquire(&inst, device, 0, seed + 20_000 + i).unwrap();
        let reg = register(cap.image.raster(), &t, &cfg).unwrap();
        let (dx, dy) = (
            reg.shift.0 - cap.true_shift.0,
            reg.shift.1 - cap.true_shift.1,
        );
        exact += usize::from(dx == 0 && dy == 0);
        near += usize::from(dx.abs() <= 1 && dy.abs() <= 1);
    }
    (exact as f64 / n as f64, near as f64 / n as f64)
}
