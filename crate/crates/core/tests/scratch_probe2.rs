//! Temporary diagnostic probe for the 64x64 acceptance regime (removed
//! before release).

use mfdr_core::fft::{fft2c, ifft2c};
use mfdr_core::recon::*;
use mfdr_core::*;

#[test]
#[ignore]
fn probe64() {
    let shape = 64usize;
    for seed in [50u64, 60, 70] {
        let stack = make_phantom(&PhantomConfig::new((shape, shape)), seed).unwrap();
        let mask = make_mask(MaskPattern::Random2D, (shape, shape), 4.0, 8, seed + 1).unwrap();
        let meas = Measurement::from_image(&stack, mask).unwrap();
        let reference = sos_combine(&stack).unwrap();
        let zf = zero_filled(&meas).unwrap().1;
        let zf_db = psnr(&reference, &zf).unwrap();

        let kf = fft2c(&stack.coils()[0]);
        let zf_k = {
            let mut d = kf.array().clone();
            d.zip_mut_with(&meas.mask().omega, |v, &m| {
                if !m {
                    *v = num_complex::Complex64::new(0.0, 0.0);
                }
            });
            ComplexGrid::from_array(d)
        };
        print!("seed {seed}: zf {zf_db:.2} dB |");
        for (win, rank, iters) in [(6usize, 24usize, 30usize), (6, 28, 30), (8, 40, 30), (6, 24, 100)] {
            let mut k = zf_k.clone();
            for _ in 0..iters {
                let p = hankel_project(&k, (win, win), rank).unwrap();
                k = data_consistency(&p, &zf_k, &meas.mask().omega, f64::INFINITY).unwrap();
            }
            let img = ifft2c(&k).magnitude();
            print!(
                " w{win}r{rank}x{iters}: {:.2}",
                psnr(&reference, &img).unwrap()
            );
        }
        println!();
    }
}
