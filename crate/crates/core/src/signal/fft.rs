use num_complex::Complex;

use crate::scalar::Real;

/// In-place iterative radix-2 FFT for a fixed power-of-two length.
///
/// Forward transform is unnormalized; the inverse applies `1/N`.
#[derive(Debug, Clone)]
pub struct Fft<T> {
    n: usize,
    twiddles: Vec<Complex<T>>,
    bitrev: Vec<usize>,
}

impl<T: Real> Fft<T> {
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two() && n >= 2, "FFT length must be a power of two, got {n}");
        let bits = n.trailing_zeros();
        let bitrev = (0..n).map(|i| i.reverse_bits() >> (usize::BITS - bits)).collect();
        // twiddles computed in f64 then narrowed, so f32 tables carry no accumulated phase error
        let twiddles = (0..n / 2)
            .map(|k| {
                let ang = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
                Complex::new(T::lit(ang.cos()), T::lit(ang.sin()))
            })
            .collect();
        Self { n, twiddles, bitrev }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, buf: &mut [Complex<T>]) {
        self.transform(buf, false);
    }

    pub fn inverse(&self, buf: &mut [Complex<T>]) {
        self.transform(buf, true);
        let scale = T::one() / T::from_usize_lossy(self.n);
        for c in buf.iter_mut() {
            *c = *c * scale;
        }
    }

    fn transform(&self, buf: &mut [Complex<T>], inverse: bool) {
        assert_eq!(buf.len(), self.n);
        for i in 0..self.n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= self.n {
            let half = size / 2;
            let stride = self.n / size;
            for start in (0..self.n).step_by(size) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            size *= 2;
        }
    }
}
