//! Fully convolutional dense U-Net (Tiramisu layout with interpolation
//! upsampling instead of transposed convolutions).
//!
//! Down path: dense block → transition (BN-ReLU, 1×1 conv compressing the
//! channel count, dropout, 2×2 max pool). The bottleneck block and all inner
//! up-path blocks pass on only the features they create; the outermost up
//! block passes on everything, followed by a 1×1 head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::EncoderConfig;
use crate::error::{ComirError, Result};
use crate::imaging::Image;
use crate::loss::BatchEncoder;
use crate::nn::{upsample2_backward, upsample2_forward, BnRelu, Conv2d, Dropout, MaxPool2, Param, Tensor};

/// A named parameter or statistics buffer, for checkpointing and optimizers.
pub enum Slot<'a> {
    Param(&'a mut Param),
    Buffer(&'a mut Vec<f32>),
}

type Visitor<'a, 'v> = dyn FnMut(String, Slot<'a>) + 'v;

#[derive(Debug, Clone)]
struct DenseLayer {
    bn: BnRelu,
    conv: Conv2d,
    drop: Dropout,
}

impl DenseLayer {
    fn new(cin: usize, growth: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        DenseLayer {
            bn: BnRelu::new(cin),
            conv: Conv2d::new(cin, growth, 3, rng),
            drop: Dropout::new(dropout as f32),
        }
    }

    fn visit<'a>(&'a mut self, prefix: &str, f: &mut Visitor<'a, '_>) {
        visit_bn(&mut self.bn, &format!("{prefix}.bn"), f);
        visit_conv(&mut self.conv, &format!("{prefix}.conv"), f);
    }
}

fn visit_bn<'a>(bn: &'a mut BnRelu, prefix: &str, f: &mut Visitor<'a, '_>) {
    f(format!("{prefix}.gamma"), Slot::Param(&mut bn.gamma));
    f(format!("{prefix}.beta"), Slot::Param(&mut bn.beta));
    f(format!("{prefix}.running_mean"), Slot::Buffer(&mut bn.running_mean));
    f(format!("{prefix}.running_var"), Slot::Buffer(&mut bn.running_var));
}

fn visit_conv<'a>(conv: &'a mut Conv2d, prefix: &str, f: &mut Visitor<'a, '_>) {
    f(format!("{prefix}.weight"), Slot::Param(&mut conv.weight));
    f(format!("{prefix}.bias"), Slot::Param(&mut conv.bias));
}

/// Dense block over a channel-prefix buffer: layer `i` reads the first
/// `in + i·growth` channels and writes its `growth` channels right after.
#[derive(Debug, Clone)]
struct DenseBlock {
    in_channels: usize,
    growth: usize,
    layers: Vec<DenseLayer>,
}

impl DenseBlock {
    fn new(in_channels: usize, depth: usize, growth: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        let layers = (0..depth)
            .map(|i| DenseLayer::new(in_channels + i * growth, growth, dropout, rng))
            .collect();
        DenseBlock {
            in_channels,
            growth,
            layers,
        }
    }

    fn out_channels(&self) -> usize {
        self.in_channels + self.new_channels()
    }

    fn new_channels(&self) -> usize {
        self.layers.len() * self.growth
    }

    fn forward(&mut self, x: &Tensor, train: bool, rng: &mut ChaCha8Rng) -> Tensor {
        let mut buf = x.embed(self.out_channels(), 0);
        let mut c = self.in_channels;
        for layer in &mut self.layers {
            let h = layer.bn.forward(&buf, train);
            let y = layer.conv.forward_owned(h, train);
            let y = layer.drop.forward(y, train, rng);
            buf.write_channels(c, &y);
            c += self.growth;
        }
        buf
    }

    /// Takes the gradient of the full buffer, returns the input gradient.
    fn backward(&mut self, mut gbuf: Tensor) -> Tensor {
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let c = self.in_channels + i * self.growth;
            let gy = layer.drop.backward(gbuf.channel_range(c, self.growth));
            let gh = layer.conv.backward(&gy);
            layer.bn.backward_into(&gh, &mut gbuf);
        }
        gbuf.channel_range(0, self.in_channels)
    }

    fn visit<'a>(&'a mut self, prefix: &str, f: &mut Visitor<'a, '_>) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit(&format!("{prefix}.layer{i}"), f);
        }
    }
}

#[derive(Debug, Clone)]
struct TransitionDown {
    bn: BnRelu,
    conv: Conv2d,
    drop: Dropout,
    pool: MaxPool2,
}

impl TransitionDown {
    fn new(cin: usize, cout: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        TransitionDown {
            bn: BnRelu::new(cin),
            conv: Conv2d::new(cin, cout, 1, rng),
            drop: Dropout::new(dropout as f32),
            pool: MaxPool2::default(),
        }
    }

    fn forward(&mut self, x: &Tensor, train: bool, rng: &mut ChaCha8Rng) -> Tensor {
        let h = self.bn.forward(x, train);
        let y = self.conv.forward_owned(h, train);
        let y = self.drop.forward(y, train, rng);
        self.pool.forward(&y, train)
    }

    fn backward(&mut self, g: &Tensor) -> Tensor {
        let g = self.pool.backward(g);
        let g = self.drop.backward(g);
        let gh = self.conv.backward(&g);
        let mut gx = Tensor::zeros(gh.n, self.bn.channels, gh.h, gh.w);
        self.bn.backward_into(&gh, &mut gx);
        gx
    }

    fn visit<'a>(&'a mut self, prefix: &str, f: &mut Visitor<'a, '_>) {
        visit_bn(&mut self.bn, &format!("{prefix}.bn"), f);
        visit_conv(&mut self.conv, &format!("{prefix}.conv"), f);
    }
}

/// Channel bookkeeping captured during a training forward pass.
#[derive(Debug, Clone)]
struct Trace {
    skip_channels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DenseUNet {
    cfg: EncoderConfig,
    first: Conv2d,
    down: Vec<(DenseBlock, TransitionDown)>,
    bottleneck: DenseBlock,
    /// Innermost level first.
    up: Vec<DenseBlock>,
    head: Conv2d,
    dropout_rng: ChaCha8Rng,
    trace: Option<Trace>,
}

/// Builds an encoder with He-initialized weights drawn from `seed`.
pub fn build_encoder(cfg: &EncoderConfig, seed: u64) -> Result<DenseUNet> {
    DenseUNet::new(cfg, seed)
}

impl DenseUNet {
    pub fn new(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = cfg.growth_rate;
        let first = Conv2d::new(cfg.in_channels, cfg.first_conv_filters, 3, &mut rng);
        let mut c = cfg.first_conv_filters;
        let mut skips = Vec::new();
        let mut down = Vec::new();
        for &d in &cfg.down_blocks {
            let block = DenseBlock::new(c, d, g, cfg.dropout, &mut rng);
            let skip = block.out_channels();
            let squeezed = (skip as f64 * cfg.compression).floor() as usize;
            let td = TransitionDown::new(skip, squeezed, cfg.dropout, &mut rng);
            skips.push(skip);
            down.push((block, td));
            c = squeezed;
        }
        let bottleneck = DenseBlock::new(c, cfg.bottleneck_layers, g, cfg.dropout, &mut rng);
        let mut prev_new = bottleneck.new_channels();
        let mut up = Vec::new();
        let mut last_out = 0;
        for (i, &d) in cfg.up_blocks.iter().enumerate() {
            let skip = skips[cfg.levels() - 1 - i];
            let block = DenseBlock::new(prev_new + skip, d, g, cfg.dropout, &mut rng);
            prev_new = block.new_channels();
            last_out = block.out_channels();
            up.push(block);
        }
        let head = Conv2d::new(last_out, cfg.out_channels, 1, &mut rng);
        Ok(DenseUNet {
            cfg: cfg.clone(),
            first,
            down,
            bottleneck,
            up,
            head,
            dropout_rng: ChaCha8Rng::seed_from_u64(seed ^ 0xd1b5_4a32_d192_ed03),
            trace: None,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Reseeds the generator behind dropout masks.
    pub fn reseed_dropout(&mut self, seed: u64) {
        self.dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Visits every parameter and statistics buffer in a fixed order.
    pub fn visit<'a>(&'a mut self, f: &mut Visitor<'a, '_>) {
        visit_conv(&mut self.first, "first", f);
        for (l, (block, td)) in self.down.iter_mut().enumerate() {
            block.visit(&format!("down{l}"), f);
            td.visit(&format!("down{l}.transition"), f);
        }
        self.bottleneck.visit("bottleneck", f);
        for (i, block) in self.up.iter_mut().enumerate() {
            block.visit(&format!("up{i}"), f);
        }
        visit_conv(&mut self.head, "head", f);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        self.visit(&mut |_, slot| {
            if let Slot::Param(p) = slot {
                out.push(p);
            }
        });
        out
    }

    /// `(name, values)` for every parameter and buffer, in visiting order.
    pub fn named_tensors(&mut self) -> Vec<(String, Vec<f32>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, slot| {
            let v = match slot {
                Slot::Param(p) => p.value.clone(),
                Slot::Buffer(b) => b.clone(),
            };
            out.push((name, v));
        });
        out
    }

    /// Overwrites parameters and buffers from `tensors` (same order and sizes).
    pub fn load_named_tensors(&mut self, tensors: &[(String, Vec<f32>)]) -> Result<()> {
        let mut i = 0;
        let mut err = None;
        self.visit(&mut |name, slot| {
            if err.is_some() {
                return;
            }
            let Some((tname, values)) = tensors.get(i) else {
                err = Some(format!("missing tensor `{name}`"));
                return;
            };
            i += 1;
            let dst = match slot {
                Slot::Param(p) => &mut p.value,
                Slot::Buffer(b) => b,
            };
            if *tname != name || values.len() != dst.len() {
                err = Some(format!(
                    "expected `{name}` with {} values, found `{tname}` with {}",
                    dst.len(),
                    values.len()
                ));
                return;
            }
            dst.copy_from_slice(values);
        });
        if let Some(e) = err {
            return Err(ComirError::Checkpoint(e));
        }
        if i != tensors.len() {
            return Err(ComirError::Checkpoint(format!(
                "{} tensors stored, model has {i}",
                tensors.len()
            )));
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn parameter_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }

    /// SHA-256 over all parameter and buffer bytes, hex encoded.
    pub fn parameter_hash(&mut self) -> String {
        let mut h = Sha256::new();
        for (name, values) in self.named_tensors() {
            h.update(name.as_bytes());
            for v in values {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Ordered list of layer names, for auditing the realized topology.
    pub fn layer_list(&mut self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |name, _| {
            if let Some(stem) = name.strip_suffix(".weight").or_else(|| name.strip_suffix(".gamma")) {
                out.push(stem.to_string());
            }
        });
        out
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let m = self.cfg.size_multiple();
        if x.c != self.cfg.in_channels {
            return Err(ComirError::ShapeMismatch(format!(
                "encoder expects {} input channels, got {}",
                self.cfg.in_channels, x.c
            )));
        }
        if x.h < m || x.w < m || x.h % m != 0 || x.w % m != 0 {
            return Err(ComirError::InputTooSmall(format!(
                "batch sides {}x{} must be positive multiples of {m}",
                x.h, x.w
            )));
        }
        Ok(())
    }

    fn forward_tensor(&mut self, x: &Tensor, train: bool) -> Tensor {
        let rng = &mut self.dropout_rng;
        let mut cur = self.first.forward(x, train);
        let mut skips = Vec::with_capacity(self.down.len());
        for (block, td) in &mut self.down {
            let buf = block.forward(&cur, train, rng);
            cur = td.forward(&buf, train, rng);
            skips.push(buf);
        }
        let b = self.bottleneck.forward(&cur, train, rng);
        let mut new = b.channel_range(self.bottleneck.in_channels, self.bottleneck.new_channels());
        drop(b);
        let last = self.up.len() - 1;
        let mut skip_channels = Vec::new();
        let mut out = None;
        for (i, block) in self.up.iter_mut().enumerate() {
            let skip = skips.pop().expect("one skip per level");
            skip_channels.push(skip.c);
            let up = upsample2_forward(&new);
            let cat = Tensor::concat_channels(&[&up, &skip]);
            let buf = block.forward(&cat, train, rng);
            if i == last {
                out = Some(buf);
            } else {
                new = buf.channel_range(cat.c, block.new_channels());
            }
        }
        self.trace = train.then_some(Trace { skip_channels });
        self.head.forward_owned(out.expect("at least one level"), train)
    }

    fn backward_tensor(&mut self, gy: &Tensor) -> Result<()> {
        let trace = self
            .trace
            .take()
            .ok_or_else(|| ComirError::Config("backward called without a training forward pass".into()))?;
        let g_last = self.head.backward(gy);
        let last = self.up.len() - 1;
        let mut skip_grads = Vec::with_capacity(self.up.len());
        let mut g_new: Option<Tensor> = None;
        for i in (0..self.up.len()).rev() {
            let block = &mut self.up[i];
            let gbuf = if i == last {
                g_last.clone()
            } else {
                g_new.take().expect("set by outer level").embed(block.out_channels(), block.in_channels)
            };
            let gcat = block.backward(gbuf);
            let skip_c = trace.skip_channels[i];
            let up_c = gcat.c - skip_c;
            skip_grads.push(gcat.channel_range(up_c, skip_c));
            g_new = Some(upsample2_backward(&gcat.channel_range(0, up_c)));
        }
        // skip_grads now holds the outermost level first
        let gb = g_new
            .expect("bottleneck gradient")
            .embed(self.bottleneck.out_channels(), self.bottleneck.in_channels);
        let mut gcur = self.bottleneck.backward(gb);
        for (l, (block, td)) in self.down.iter_mut().enumerate().rev() {
            let mut gbuf = td.backward(&gcur);
            gbuf.add_assign(&skip_grads[l]);
            gcur = block.backward(gbuf);
        }
        self.first.backward(&gcur);
        Ok(())
    }

    /// Evaluation-mode forward pass on a single image of any size at least
    /// one pooling cell wide: sides are reflect-padded up to the next
    /// multiple of `2^levels` and the output cropped back.
    pub fn forward_image(&mut self, img: &Image) -> Result<Image> {
        let m = self.cfg.size_multiple();
        let (h, w) = (img.height(), img.width());
        if h < m || w < m {
            return Err(ComirError::InputTooSmall(format!(
                "{h}x{w} input, the network needs at least {m}x{m}"
            )));
        }
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let padded = reflect_pad(img, ph, pw);
        let x = Tensor::from_images(&[&padded])?;
        let y = self.encode(&x, false)?;
        self.clear_caches();
        let full = y.to_image(0)?;
        let out = if (ph, pw) == (h, w) { full } else { full.crop(0, 0, h, w)? };
        Ok(out.with_modality(img.modality.clone()))
    }

    /// Drops cached activations from an unfinished training pass.
    pub fn clear_caches(&mut self) {
        self.trace = None;
        let clear_block = |b: &mut DenseBlock| {
            for l in &mut b.layers {
                l.bn.clear_cache();
                l.conv.clear_cache();
                l.drop.clear_cache();
            }
        };
        self.first.clear_cache();
        for (b, td) in &mut self.down {
            clear_block(b);
            td.bn.clear_cache();
            td.conv.clear_cache();
            td.drop.clear_cache();
            td.pool.clear_cache();
        }
        clear_block(&mut self.bottleneck);
        self.up.iter_mut().for_each(clear_block);
        self.head.clear_cache();
    }
}

/// Pads bottom/right by mirroring (edge pixel not repeated).
fn reflect_pad(img: &Image, ph: usize, pw: usize) -> Image {
    let (h, w) = (img.height(), img.width());
    if (ph, pw) == (h, w) {
        return img.clone();
    }
    let mirror = |i: usize, n: usize| -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let m = i % period;
        if m < n {
            m
        } else {
            period - m
        }
    };
    let mut data = Vec::with_capacity(img.channels() * ph * pw);
    for c in 0..img.channels() {
        let p = img.plane(c);
        for y in 0..ph {
            let sy = mirror(y, h);
            for x in 0..pw {
                data.push(p[sy * w + mirror(x, w)]);
            }
        }
    }
    img.with_data(img.channels(), ph, pw, data)
}

impl BatchEncoder for DenseUNet {
    fn encode(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.check_input(x)?;
        Ok(self.forward_tensor(x, train))
    }

    fn backward(&mut self, grad: &Tensor) -> Result<()> {
        self.backward_tensor(grad)
    }
}
