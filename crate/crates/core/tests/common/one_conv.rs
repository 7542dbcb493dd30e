use framemix::detector::LossParts;
use framemix::tcr::FeatureMap;
use framemix::{BoundingBox, Detection, Detector, Pixels, Result, Trainable};

/// Linear 3×3 convolution, stride 1, zero padding, no bias.
pub struct OneConv {
    pub cin: usize,
    pub cout: usize,
    pub w: Vec<f64>,
}

impl OneConv {
    fn weight(&self, co: usize, ci: usize, ky: usize, kx: usize) -> f64 {
        self.w[((co * self.cin + ci) * 3 + ky) * 3 + kx]
    }

    fn tap(image: &Pixels, y: usize, x: usize, ky: usize, kx: usize, c: usize) -> f64 {
        let (yy, xx) = (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
        if yy < 0 || xx < 0 || yy >= image.height() as isize || xx >= image.width() as isize {
            0.0
        } else {
            image.get(yy as usize, xx as usize, c)
        }
    }
}

impl Detector for OneConv {
    fn encode(&self, image: &Pixels) -> Result<FeatureMap> {
        let (h, w) = (image.height(), image.width());
        let mut v = vec![0.0; self.cout * h * w];
        for co in 0..self.cout {
            for y in 0..h {
                for x in 0..w {
                    let mut s = 0.0;
                    for ci in 0..self.cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                s += self.weight(co, ci, ky, kx) * Self::tap(image, y, x, ky, kx, ci);
                            }
                        }
                    }
                    v[(co * h + y) * w + x] = s;
                }
            }
        }
        FeatureMap::new(self.cout, h, w, v)
    }

    fn detection_loss(&self, _image: &Pixels, _boxes: &[BoundingBox]) -> Result<f64> {
        Ok(0.0)
    }

    fn predict(&self, _image: &Pixels) -> Result<Vec<Detection>> {
        Ok(Vec::new())
    }
}

impl Trainable for OneConv {
    type Tape = Pixels;

    fn params(&self) -> &[f64] {
        &self.w
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    fn trainable_mask(&self) -> Vec<bool> {
        vec![true; self.w.len()]
    }

    fn detection_loss_grad(&self, _: &Pixels, _: &[BoundingBox], _: f64, _: &mut [f64]) -> Result<LossParts> {
        Ok(LossParts::default())
    }

    fn encode_taped(&self, image: &Pixels) -> Result<(FeatureMap, Pixels)> {
        Ok((self.encode(image)?, image.clone()))
    }

    fn backprop_feature(&self, image: &Pixels, g: &FeatureMap, grad: &mut [f64]) {
        let (h, w) = (image.height(), image.width());
        for co in 0..self.cout {
            for ci in 0..self.cin {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let mut s = 0.0;
                        for y in 0..h {
                            for x in 0..w {
                                s += g.get(co, y, x) * Self::tap(image, y, x, ky, kx, ci);
                            }
                        }
                        grad[((co * self.cin + ci) * 3 + ky) * 3 + kx] += s;
                    }
                }
            }
        }
    }
}
