//! Independent reference implementations shared by test targets.
#![allow(dead_code)]

pub mod oracle {
    #[derive(Clone, Copy)]
    pub struct C(pub f64, pub f64);

    impl C {
        fn sub(self, o: C) -> C {
            C(self.0 - o.0, self.1 - o.1)
        }
        fn mul(self, o: C) -> C {
            C(self.0 * o.0 - self.1 * o.1, self.0 * o.1 + self.1 * o.0)
        }
        fn div(self, o: C) -> C {
            let d = o.0 * o.0 + o.1 * o.1;
            C((self.0 * o.0 + self.1 * o.1) / d, (self.1 * o.0 - self.0 * o.1) / d)
        }
        fn exp(self) -> C {
            let m = self.0.exp();
            C(m * self.1.cos(), m * self.1.sin())
        }
        fn scale(self, k: f64) -> C {
            C(self.0 * k, self.1 * k)
        }
    }

    pub fn gamma(q: f64, br_gbps: f64, detuning_ghz: f64, f0_thz: f64) -> f64 {
        let f0 = f0_thz * 1e12;
        let v = f0 / (2.0 * q * br_gbps * 1e9);
        let beta = 2.0 * q * detuning_ghz * 1e9 / f0;
        let x = 2.0 * std::f64::consts::PI * v;
        let z = C(1.0, -beta);
        let num = C(1.0, 0.0).sub(z.scale(-x).exp());
        let second = num.div(z.mul(z)).0 / x;
        (1.0 / (1.0 + beta * beta) - second).clamp(0.0, 1.0)
    }

    /// Filter penalty of the default model by direct summation.
    pub fn default_filter_penalty(q: f64, br: f64, n: u32, spacing_nm: f64, lambda_nm: f64) -> Option<f64> {
        let c = 299_792_458.0;
        let f0_thz = c / (lambda_nm * 1e-9) / 1e12;
        let victim = (n - 1) / 2;
        let mut s = 0.0;
        for i in 0..n {
            if i == victim {
                continue;
            }
            let dl = f64::from(i.abs_diff(victim)) * spacing_nm * 1e-9;
            let fd_ghz = c * dl / (lambda_nm * 1e-9).powi(2) / 1e9;
            s += gamma(q, br, fd_ghz, f0_thz);
        }
        let opening = (1.0 - 1.36 * s.sqrt()) * gamma(q, br, 0.0, f0_thz) * (1.0 - q / 31_000.0).powi(2);
        (opening > 0.0).then(|| -10.0 * opening.log10())
    }
}
