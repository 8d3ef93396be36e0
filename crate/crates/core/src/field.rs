use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::interp::Pchip;

/// Complex radial samples `u(r_i)` at time `time`.
#[derive(Debug, Clone)]
pub struct ComplexRadialField {
    values: Vec<Complex64>,
    grid: Arc<RadialGrid>,
    pub time: f64,
}

impl ComplexRadialField {
    pub fn new(values: Vec<Complex64>, grid: Arc<RadialGrid>, time: f64) -> Result<Self> {
        grid.check_len(values.len())?;
        if let Some(i) = values.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { values, grid, time })
    }

    pub fn from_real(values: &[f64], grid: Arc<RadialGrid>, time: f64) -> Result<Self> {
        Self::new(values.iter().map(|&x| Complex64::new(x, 0.0)).collect(), grid, time)
    }

    /// Samples a closure of `r` on every node.
    pub fn from_fn(grid: Arc<RadialGrid>, time: f64, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        let values = grid.nodes.iter().map(|&r| f(r)).collect();
        Self::new(values, grid, time)
    }

    pub fn zeros(grid: Arc<RadialGrid>) -> Self {
        let n = grid.len();
        Self { values: vec![Complex64::new(0.0, 0.0); n], grid, time: 0.0 }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    /// Applies `f` sample-wise; finiteness is the caller's responsibility.
    pub fn map(&self, f: impl Fn(f64, Complex64) -> Complex64) -> Self {
        let values = self.grid.nodes.iter().zip(&self.values).map(|(&r, &z)| f(r, z)).collect();
        Self { values, grid: self.grid.clone(), time: self.time }
    }

    pub fn scale(&self, s: Complex64) -> Self {
        self.map(|_, z| z * s)
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    /// Regular factor `v = r^{-σ} u`.
    pub(crate) fn regular_factor(&self) -> Vec<Complex64> {
        self.values.iter().zip(&self.grid.r_sigma).map(|(z, s)| z / s).collect()
    }

    pub(crate) fn from_regular_factor(v: &[Complex64], grid: Arc<RadialGrid>, time: f64) -> Self {
        let values = v.iter().zip(&grid.r_sigma).map(|(z, s)| z * s).collect();
        Self { values, grid, time }
    }

    /// Off-grid evaluation by monotone cubic interpolation of `r^{-σ}u`.
    pub fn sampler(&self) -> FieldSampler {
        let v = self.regular_factor();
        let nodes = self.grid.nodes.clone();
        FieldSampler {
            re: Pchip::new(nodes.clone(), v.iter().map(|z| z.re).collect()),
            im: Pchip::new(nodes, v.iter().map(|z| z.im).collect()),
            sigma: self.grid.sigma,
            r0: self.grid.nodes[0],
            r_max: self.grid.r_max,
        }
    }

    /// `√(∫|u - w|²)`.
    pub fn l2_distance(&self, other: &Self) -> Result<f64> {
        self.grid.check_len(other.values.len())?;
        let d: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm_sqr()).collect();
        Ok(self.grid.integrate(&d)?.sqrt())
    }

    /// Writes the `r,re,im` snapshot layout.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["r", "re", "im"])?;
        for (r, z) in self.grid.nodes.iter().zip(&self.values) {
            wr.write_record([fmt_f64(*r), fmt_f64(z.re), fmt_f64(z.im)])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads an `r,re,im` snapshot; the radii must match `grid`.
    pub fn read_csv<R: Read>(r: R, grid: Arc<RadialGrid>, time: f64) -> Result<Self> {
        let rows = read_columns(r, &["r", "re", "im"])?;
        if rows.is_empty() {
            return Err(Error::Format("snapshot has no rows".into()));
        }
        check_radii(&rows.iter().map(|row| row[0]).collect::<Vec<_>>(), &grid)?;
        let values = rows.iter().map(|row| Complex64::new(row[1], row[2])).collect();
        Self::new(values, grid, time)
    }
}

/// Continuous extension of a sampled field: `r^σ v(r)` with `v` held
/// constant inside the first node and zero beyond `r_max`.
#[derive(Debug, Clone)]
pub struct FieldSampler {
    re: Pchip,
    im: Pchip,
    sigma: f64,
    r0: f64,
    r_max: f64,
}

impl FieldSampler {
    pub fn eval(&self, r: f64) -> Complex64 {
        if r >= self.r_max {
            return Complex64::new(0.0, 0.0);
        }
        let s = r.max(self.r0);
        let v = Complex64::new(self.re.eval(s).unwrap_or(0.0), self.im.eval(s).unwrap_or(0.0));
        v * r.powf(self.sigma)
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Reads a headed CSV and returns numeric rows in the order of `columns`.
pub(crate) fn read_columns<R: Read>(r: R, columns: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| {
            headers.iter().position(|h| h.trim() == *c).ok_or_else(|| Error::Format(format!("missing column `{c}`")))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let row = idx
            .iter()
            .map(|&i| {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Format(format!("bad number in row {}", out.len() + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(row);
    }
    Ok(out)
}

pub(crate) fn check_radii(radii: &[f64], grid: &RadialGrid) -> Result<()> {
    grid.check_len(radii.len())?;
    for (i, (a, b)) in radii.iter().zip(&grid.nodes).enumerate() {
        if (a - b).abs() > 1e-12 * b.abs().max(1e-300) {
            return Err(Error::Format(format!("radius mismatch at node {i}: {a} vs {b}")));
        }
    }
    Ok(())
}

/// Second-order nodal derivative on a non-uniform mesh (one-sided at the ends).
pub fn derivative_nodal<T>(nodes: &[f64], f: &[T]) -> Vec<T>
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
{
    let n = nodes.len();
    assert!(n >= 3 && f.len() == n);
    let mut out = Vec::with_capacity(n);
    // Left: quadratic through nodes 0, 1, 2.
    let (h1, h2) = (nodes[1] - nodes[0], nodes[2] - nodes[1]);
    out.push(
        f[0] * (-(2.0 * h1 + h2) / (h1 * (h1 + h2))) + f[1] * ((h1 + h2) / (h1 * h2)) + f[2] * (-h1 / (h2 * (h1 + h2))),
    );
    for i in 1..n - 1 {
        let hl = nodes[i] - nodes[i - 1];
        let hr = nodes[i + 1] - nodes[i];
        out.push(
            f[i - 1] * (-hr / (hl * (hl + hr))) + f[i] * ((hr - hl) / (hl * hr)) + f[i + 1] * (hl / (hr * (hl + hr))),
        );
    }
    let (h1, h2) = (nodes[n - 2] - nodes[n - 3], nodes[n - 1] - nodes[n - 2]);
    out.push(
        f[n - 3] * (h2 / (h1 * (h1 + h2)))
            + f[n - 2] * (-(h1 + h2) / (h1 * h2))
            + f[n - 1] * ((h1 + 2.0 * h2) / (h2 * (h1 + h2))),
    );
    out
}

/// `∂_r u` sampled on the same grid.
pub fn radial_derivative(u: &ComplexRadialField) -> ComplexRadialField {
    let values = derivative_nodal(&u.grid.nodes, &u.values);
    ComplexRadialField { values, grid: u.grid.clone(), time: u.time }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, MeshKind};
    use crate::params::PhysicalParams;

    fn grid(n: usize) -> Arc<RadialGrid> {
        let p = PhysicalParams::critical(3, 0.1875).unwrap();
        Arc::new(build_grid(&p, n, 10.0, MeshKind::default()).unwrap())
    }

    #[test]
    fn rejects_bad_samples() {
        let g = grid(32);
        let mut v = vec![Complex64::new(1.0, 0.0); 32];
        v[3] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(ComplexRadialField::new(v, g.clone(), 0.0), Err(Error::NonFinite(3))));
        assert!(matches!(
            ComplexRadialField::new(vec![Complex64::new(0.0, 0.0); 5], g, 0.0),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn derivative_of_constant_and_quadratic() {
        let g = grid(64);
        let c = ComplexRadialField::from_fn(g.clone(), 0.0, |_| Complex64::new(2.5, -1.0)).unwrap();
        assert!(radial_derivative(&c).values().iter().all(|z| z.norm() < 1e-9));
        let q = ComplexRadialField::from_fn(g.clone(), 0.0, |r| Complex64::new(r, 3.0 * r * r - r)).unwrap();
        let dq = radial_derivative(&q);
        for (r, z) in g.nodes.iter().zip(dq.values()) {
            assert!((z.re - 1.0).abs() < 1e-8 * (1.0 + r));
            assert!((z.im - (6.0 * r - 1.0)).abs() < 1e-8 * (1.0 + r * r));
        }
    }

    #[test]
    fn derivative_of_singular_profile() {
        // d/dr (r^σ e^{-r}) = (σ/r - 1) r^σ e^{-r}
        let g = grid(4096);
        let s = g.sigma;
        let u = ComplexRadialField::from_fn(g.clone(), 0.0, |r| Complex64::new(r.powf(s) * (-r).exp(), 0.0)).unwrap();
        let du = radial_derivative(&u);
        for (i, (&r, z)) in g.nodes.iter().zip(du.values()).enumerate() {
            if r < 0.05 {
                continue;
            }
            let exact = (s / r - 1.0) * r.powf(s) * (-r).exp();
            assert!((z.re - exact).abs() < 1e-4 * exact.abs().max(1e-3), "node {i}, r = {r}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = grid(40);
        let u = ComplexRadialField::from_fn(g.clone(), 0.5, |r| Complex64::new((-r).exp(), 0.1 * r)).unwrap();
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("r,re,im\n"));
        let back = ComplexRadialField::read_csv(&buf[..], g, 0.5).unwrap();
        assert_eq!(back.values(), u.values());
    }

    #[test]
    fn csv_rejects_empty() {
        let g = grid(40);
        assert!(ComplexRadialField::read_csv("r,re,im\n".as_bytes(), g, 0.0).is_err());
    }
}
