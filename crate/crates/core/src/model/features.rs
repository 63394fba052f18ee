//! Fixed random convolutional feature path between the dendrite layer and
//! the state-space blocks: two (3x3 conv, identity batch norm, 2x2 max pool)
//! blocks, a 2x2 spatial pool and a linear projection.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::events::Geometry;
use crate::hippo::gaussian;
use crate::neuron::{spatial_max_pool, PoolConfig};

#[derive(Debug, Clone)]
struct ConvStage {
    cin: usize,
    cout: usize,
    /// `[out][in][ky][kx]`, row-major.
    weights: Vec<f64>,
}

impl ConvStage {
    fn random(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = 1.0 / ((9 * cin) as f64).sqrt();
        let weights = gaussian(1, cout * cin * 9, std, rng).as_slice().to_vec();
        Self { cin, cout, weights }
    }

    /// Zero-padded "same" cross-correlation, scattered from the nonzero
    /// inputs so sparse spike maps stay cheap.
    fn apply(&self, input: &[f64], g: Geometry) -> Vec<f64> {
        let (w, h) = (g.width as i64, g.height as i64);
        let plane = (w * h) as usize;
        let mut out = vec![0.0; self.cout * plane];
        for ci in 0..self.cin {
            for y in 0..h {
                for x in 0..w {
                    let v = input[ci * plane + (y * w + x) as usize];
                    if v == 0.0 {
                        continue;
                    }
                    for ky in 0..3i64 {
                        for kx in 0..3i64 {
                            // out(oy, ox) reads in(oy + ky - 1, ox + kx - 1)
                            let (oy, ox) = (y - ky + 1, x - kx + 1);
                            if oy < 0 || ox < 0 || oy >= h || ox >= w {
                                continue;
                            }
                            let o = (oy * w + ox) as usize;
                            for co in 0..self.cout {
                                let k = ((co * self.cin + ci) * 3 + ky as usize) * 3 + kx as usize;
                                out[co * plane + o] += self.weights[k] * v;
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

fn pool_channels(input: &[f64], channels: usize, g: Geometry) -> Result<(Vec<f64>, Geometry)> {
    let cfg = PoolConfig::square(2, g);
    let plane = g.pixels();
    let mut out = Vec::new();
    for c in 0..channels {
        out.extend(spatial_max_pool(&input[c * plane..(c + 1) * plane], &cfg)?);
    }
    Ok((out, cfg.output_geometry()))
}

#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    geometry: Geometry,
    stages: Vec<ConvStage>,
    projection: DMatrix<f64>,
}

impl FeatureExtractor {
    pub fn new(geometry: Geometry, filters: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stages = vec![
            ConvStage::random(1, filters, &mut rng),
            ConvStage::random(filters, filters, &mut rng),
        ];
        let mut g = geometry;
        for _ in 0..3 {
            g = PoolConfig::square(2, g).output_geometry();
        }
        let flat = filters * g.pixels();
        let projection = gaussian(filters, flat, 1.0 / (flat as f64).sqrt(), &mut rng);
        Self {
            geometry,
            stages,
            projection,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.projection.nrows()
    }

    /// Features for one tick given the spike map of the dendrite layer.
    pub fn extract(&self, spike_map: &[f64]) -> Result<DVector<f64>> {
        let mut g = self.geometry;
        let mut x = spike_map.to_vec();
        let mut channels = 1;
        for stage in &self.stages {
            x = stage.apply(&x, g);
            channels = stage.cout;
            (x, g) = pool_channels(&x, channels, g)?;
        }
        let (pooled, _) = pool_channels(&x, channels, g)?;
        Ok(&self.projection * DVector::from_vec(pooled))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_dense_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let stage = ConvStage::random(2, 3, &mut rng);
        let g = Geometry::new(5, 4);
        let input: Vec<f64> = (0..40).map(|i| if i % 3 == 0 { (i as f64).sin() } else { 0.0 }).collect();
        let got = stage.apply(&input, g);
        for co in 0..3 {
            for oy in 0..4i64 {
                for ox in 0..5i64 {
                    let mut want = 0.0;
                    for ci in 0..2 {
                        for ky in 0..3i64 {
                            for kx in 0..3i64 {
                                let (y, x) = (oy + ky - 1, ox + kx - 1);
                                if y >= 0 && x >= 0 && y < 4 && x < 5 {
                                    let k = ((co * 2 + ci) * 3 + ky as usize) * 3 + kx as usize;
                                    want += stage.weights[k] * input[ci * 20 + (y * 5 + x) as usize];
                                }
                            }
                        }
                    }
                    assert!((got[co * 20 + (oy * 5 + ox) as usize] - want).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn silent_map_gives_zero_features() {
        let f = FeatureExtractor::new(Geometry::new(9, 7), 4, 0);
        assert_eq!(f.output_dim(), 4);
        assert!(f.extract(&[0.0; 63]).unwrap().iter().all(|v| *v == 0.0));
    }
}
