use crate::error::{ComirError, Result};
use crate::imaging::{rotate_plane_c4, C4Element, Image};

/// Dense `n × c × h × w` float tensor in row-major (NCHW) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(ComirError::ShapeMismatch(format!(
                "tensor {n}x{c}x{h}x{w} needs {} values, got {}",
                n * c * h * w,
                data.len()
            )));
        }
        Ok(Tensor { n, c, h, w, data })
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    /// Values of one batch item, `c × h × w`.
    pub fn item(&self, i: usize) -> &[f32] {
        let len = self.c * self.hw();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [f32] {
        let len = self.c * self.hw();
        &mut self.data[i * len..(i + 1) * len]
    }

    /// Copies channels `[from, from + count)` into a new tensor.
    pub fn channel_range(&self, from: usize, count: usize) -> Tensor {
        let hw = self.hw();
        let mut out = Tensor::zeros(self.n, count, self.h, self.w);
        for i in 0..self.n {
            let src = &self.item(i)[from * hw..(from + count) * hw];
            out.item_mut(i).copy_from_slice(src);
        }
        out
    }

    /// Writes `src` into channels starting at `at`.
    pub fn write_channels(&mut self, at: usize, src: &Tensor) {
        let hw = self.hw();
        for i in 0..self.n {
            let dst = &mut self.item_mut(i)[at * hw..(at + src.c) * hw];
            dst.copy_from_slice(src.item(i));
        }
    }

    /// Adds `src` into channels starting at `at`.
    pub fn add_channels(&mut self, at: usize, src: &Tensor) {
        let hw = self.hw();
        for i in 0..self.n {
            let dst = &mut self.item_mut(i)[at * hw..(at + src.c) * hw];
            for (d, s) in dst.iter_mut().zip(src.item(i)) {
                *d += s;
            }
        }
    }

    /// Widens to `c_total` channels, placing `self` at channel offset `at`.
    pub fn embed(&self, c_total: usize, at: usize) -> Tensor {
        let mut out = Tensor::zeros(self.n, c_total, self.h, self.w);
        out.write_channels(at, self);
        out
    }

    /// Stacks along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Tensor {
        let first = parts[0];
        let c: usize = parts.iter().map(|p| p.c).sum();
        let mut out = Tensor::zeros(first.n, c, first.h, first.w);
        let mut at = 0;
        for p in parts {
            out.write_channels(at, p);
            at += p.c;
        }
        out
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks equally shaped images into a batch.
    pub fn from_images(images: &[&Image]) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| ComirError::ShapeMismatch("empty image batch".into()))?;
        let (c, h, w) = (first.channels(), first.height(), first.width());
        let mut data = Vec::with_capacity(images.len() * c * h * w);
        for img in images {
            if !img.same_shape(first) {
                return Err(ComirError::ShapeMismatch(format!(
                    "batch mixes {}x{}x{} and {c}x{h}x{w}",
                    img.channels(),
                    img.height(),
                    img.width()
                )));
            }
            data.extend_from_slice(img.data());
        }
        Tensor::from_vec(images.len(), c, h, w, data)
    }

    /// Batch item `i` as an image.
    pub fn to_image(&self, i: usize) -> Result<Image> {
        Image::new(self.c, self.h, self.w, self.item(i).to_vec())
    }

    /// Rotates every channel of item `i` in place by a quarter-turn element.
    /// Requires square items.
    pub fn rotate_item_c4(&mut self, i: usize, g: C4Element) {
        if g.is_identity() {
            return;
        }
        assert_eq!(self.h, self.w, "quarter-turns in place need square items");
        let hw = self.hw();
        let (h, w) = (self.h, self.w);
        let mut tmp = vec![0.0f32; hw];
        for ch in 0..self.c {
            let plane = &mut self.item_mut(i)[ch * hw..(ch + 1) * hw];
            rotate_plane_c4(plane, h, w, g.k(), &mut tmp);
            plane.copy_from_slice(&tmp);
        }
    }
}
