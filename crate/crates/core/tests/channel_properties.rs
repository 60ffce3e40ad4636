//! Monte-Carlo properties of the print-and-capture channel.

use cdp_core::align::{register, AlignConfig};
use cdp_core::channel::{
    acquire, capture_repeats, print_instance, DeviceProfile, PrinterProfile, ProfileSet,
};
use cdp_core::imgcore::generate_template;
use cdp_core::metrics::pcorr;
use cdp_core::Raster;

const MARGIN: usize = 8;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn aligned(y: &Raster, t: &cdp_core::Template) -> Raster {
    register(y, t, &AlignConfig::default())
        .unwrap()
        .aligned
        .crop_margin(MARGIN)
        .unwrap()
}

#[test]
fn identity_channel() {
    let t = generate_template(2, 16, 16, 0.5).unwrap();
    let printer = PrinterProfile {
        id: "ideal".into(),
        dot_gain: 0.0,
        instance_noise_sigma: 1e-300,
        print_blur_sigma: 0.0,
    };
    let inst = print_instance(&t, &printer, 0, 9).unwrap();
    for (a, b) in inst
        .latent
        .raster()
        .pixels()
        .iter()
        .zip(t.to_raster().pixels())
    {
        assert!((a - b).abs() < 1e-250);
    }
    let device = DeviceProfile {
        id: "ideal".into(),
        psf_sigma: 0.0,
        acq_noise_sigma: 0.0,
        gamma: 1.0,
        scale_factor: 1.0,
        shift_jitter_max: 0,
    };
    let cap = acquire(&inst, &device, 0, 4).unwrap();
    assert_eq!(cap.image.raster(), inst.latent.raster());
    assert_eq!(cap.true_shift, (0, 0));
}

#[test]
fn instances_of_one_template_are_related_but_distinct() {
    let profiles = ProfileSet::default();
    for printer in &profiles.printers {
        let t = generate_template(10, 64, 64, 0.5).unwrap();
        let other = generate_template(11, 64, 64, 0.5).unwrap();
        let unrelated = print_instance(&other, printer, 0, 1).unwrap();
        for i in 0..50u64 {
            let a = print_instance(&t, printer, 0, 100 + 2 * i).unwrap();
            let b = print_instance(&t, printer, 0, 101 + 2 * i).unwrap();
            let same = pcorr(a.latent.raster(), b.latent.raster()).unwrap();
            let diff = pcorr(a.latent.raster(), unrelated.latent.raster()).unwrap();
            assert!(same < 1.0 && same > diff, "{same} vs {diff}");
            // same seed is the same instance
            assert_eq!(print_instance(&t, printer, 0, 100 + 2 * i).unwrap(), a);
        }
    }
}

#[test]
fn repeated_captures_beat_other_instances() {
    let profiles = ProfileSet::default();
    let printer = profiles.printer("HPI55").unwrap();
    for device in &profiles.devices {
        let mut within = Vec::new();
        let mut across = Vec::new();
        for i in 0..30u64 {
            let t = generate_template(200 + i, 64, 64, 0.5).unwrap();
            let a = print_instance(&t, printer, 0, 300 + i).unwrap();
            let b = print_instance(&t, printer, 1, 400 + i).unwrap();
            let reps: Vec<Raster> = capture_repeats(&a, device, 3, 500 + i)
                .unwrap()
                .iter()
                .map(|c| aligned(c.image.raster(), &t))
                .collect();
            let other = aligned(acquire(&b, device, 0, 600 + i).unwrap().image.raster(), &t);
            for x in 0..3 {
                for y in x + 1..3 {
                    within.push(pcorr(&reps[x], &reps[y]).unwrap());
                }
                across.push(pcorr(&reps[x], &other).unwrap());
            }
        }
        assert!(
            mean(&within) > mean(&across),
            "{}: within {} across {}",
            device.id,
            mean(&within),
            mean(&across)
        );
    }
}

fn mean_template_pcorr(psf: f64, noise: f64) -> f64 {
    let profiles = ProfileSet::default();
    let printer = profiles.printer("HPI76").unwrap();
    let device = DeviceProfile {
        id: "probe".into(),
        psf_sigma: psf,
        acq_noise_sigma: noise,
        gamma: 1.0,
        scale_factor: 1.0,
        shift_jitter_max: 0,
    };
    let scores: Vec<f64> = (0..20u64)
        .map(|i| {
            let t = generate_template(700 + i, 64, 64, 0.5).unwrap();
            let inst = print_instance(&t, printer, 0, 800 + i).unwrap();
            let cap = acquire(&inst, &device, 0, 900 + i).unwrap();
            pcorr(cap.image.raster(), &t.to_raster()).unwrap()
        })
        .collect();
    mean(&scores)
}

#[test]
fn blur_and_noise_reduce_template_correlation() {
    let by_psf: Vec<f64> = [0.5, 1.0, 1.5]
        .iter()
        .map(|&s| mean_template_pcorr(s, 0.006))
        .collect();
    assert!(by_psf[0] > by_psf[1] && by_psf[1] > by_psf[2], "{by_psf:?}");
    let by_noise: Vec<f64> = [0.0, 0.02, 0.08]
        .iter()
        .map(|&n| mean_template_pcorr(1.0, n))
        .collect();
    assert!(
        by_noise[0] >= by_noise[1] && by_noise[1] >= by_noise[2],
        "{by_noise:?}"
    );
}

#[test]
fn repeats_and_clamping() {
    let profiles = ProfileSet::default();
    let t = generate_template(1, 64, 64, 0.5).unwrap();
    let inst = print_instance(&t, &profiles.printers[0], 0, 3).unwrap();
    for device in &profiles.devices {
        let caps = capture_repeats(&inst, device, 3, 77).unwrap();
        let reps: Vec<Option<u32>> = caps.iter().map(|c| c.image.provenance.repetition).collect();
        assert_eq!(reps, vec![Some(0), Some(1), Some(2)]);
        assert_eq!(caps, capture_repeats(&inst, device, 3, 77).unwrap());
        assert_eq!(capture_repeats(&inst, device, 1, 77).unwrap().len(), 1);
        let (w, h) = device.capture_dims(64, 64);
        for c in &caps {
            assert_eq!(c.image.raster().dims(), (w, h));
            assert!(c
                .image
                .raster()
                .pixels()
                .iter()
                .all(|v| (0.0..=1.0).contains(v)));
            let j = device.shift_jitter_max as i32;
            assert!(c.true_shift.0.abs() <= j && c.true_shift.1.abs() <= j);
        }
    }
    assert!(inst
        .latent
        .raster()
        .pixels()
        .iter()
        .all(|v| (0.0..=1.0).contains(v)));
}
