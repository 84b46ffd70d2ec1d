use rand::Rng;

use crate::{Conv2d, ConvTranspose2d, Dense, Dueling, Layer, Network};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArchError {
    /// Input too small for the requested convolution stack.
    EncoderCollapse { stage: usize, h: i64, w: i64 },
    /// No kernel assignment lands the decoder exactly on the target shape.
    NoDecoderFit { from: (usize, usize), to: (usize, usize) },
    BadSpec(String),
}

impl std::fmt::Display for ArchError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ArchError::EncoderCollapse { stage, h, w } => {
                write!(f, "conv stage {stage} collapses the input to {h}x{w}")
            }
            ArchError::NoDecoderFit { from, to } => write!(
                f,
                "no transposed-conv kernels map {}x{} onto {}x{}",
                from.0, from.1, to.0, to.1
            ),
            ArchError::BadSpec(msg) => write!(f, "bad architecture spec: {msg}"),
        }
    }
}

impl std::error::Error for ArchError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeconvSpec {
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

pub fn conv_output(h: usize, w: usize, kernel: (usize, usize), stride: (usize, usize)) -> Option<(usize, usize)> {
    if kernel.0 > h || kernel.1 > w {
        return None;
    }
    Some(((h - kernel.0) / stride.0 + 1, (w - kernel.1) / stride.1 + 1))
}

pub fn deconv_output(h: usize, w: usize, kernel: (usize, usize), stride: (usize, usize)) -> (usize, usize) {
    ((h - 1) * stride.0 + kernel.0, (w - 1) * stride.1 + kernel.1)
}

/// Encoder/decoder shape plan: three convolutions, one hidden dense layer,
/// three transposed convolutions (decoder absent for plain value heads).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub convs: Vec<ConvSpec>,
    pub hidden: usize,
    pub deconvs: Vec<DeconvSpec>,
}

impl ArchSpec {
    /// Shape (channels, h, w) after the conv stack.
    pub fn encoder_output(&self, in_ch: usize, h: usize, w: usize) -> Result<(usize, usize, usize), ArchError> {
        let mut ch = in_ch;
        let (mut h, mut w) = (h, w);
        for (i, c) in self.convs.iter().enumerate() {
            match conv_output(h, w, c.kernel, c.stride) {
                Some((nh, nw)) if nh > 0 && nw > 0 => {
                    h = nh;
                    w = nw;
                    ch = c.out_ch;
                }
                _ => {
                    return Err(ArchError::EncoderCollapse {
                        stage: i,
                        h: h as i64 - c.kernel.0 as i64,
                        w: w as i64 - c.kernel.1 as i64,
                    })
                }
            }
        }
        Ok((ch, h, w))
    }

    pub fn decoder_output(&self, h: usize, w: usize) -> (usize, usize) {
        self.deconvs
            .iter()
            .fold((h, w), |(h, w), d| deconv_output(h, w, d.kernel, d.stride))
    }

    /// Builds an encoder/decoder spec whose decoder lands exactly on
    /// `(target_h, target_w)` with `out_ch` output frames. Encoder kernels are
    /// DQN-style for large inputs and 3x3 for small ones; decoder strides are
    /// tried from a fixed preference list starting at (1,2,2) and kernel sizes
    /// are fitted per axis, staying as close as possible to the mirrored
    /// encoder kernels.
    pub fn fit(
        in_h: usize,
        in_w: usize,
        out_ch: usize,
        target_h: usize,
        target_w: usize,
        channels: (usize, usize, usize),
        hidden: usize,
    ) -> Result<ArchSpec, ArchError> {
        let convs = encoder_convs(in_h, in_w, channels)?;
        let probe = ArchSpec {
            convs: convs.clone(),
            hidden,
            deconvs: Vec::new(),
        };
        let (_, bh, bw) = probe.encoder_output(1, in_h, in_w)?;
        let mirror: Vec<(usize, usize)> = convs.iter().rev().map(|c| c.kernel).collect();
        let geometry = fit_decoder((bh, bw), (target_h, target_w), &mirror)?;
        let deconv_channels = [channels.1, channels.0, out_ch];
        let deconvs = geometry
            .into_iter()
            .zip(deconv_channels)
            .map(|((kernel, stride), out_ch)| DeconvSpec { out_ch, kernel, stride })
            .collect();
        let spec = ArchSpec { convs, hidden, deconvs };
        debug_assert_eq!(spec.decoder_output(bh, bw), (target_h, target_w));
        Ok(spec)
    }

    /// Encoder-only spec (for value heads sharing the encoder architecture).
    pub fn fit_encoder(
        in_h: usize,
        in_w: usize,
        channels: (usize, usize, usize),
        hidden: usize,
    ) -> Result<ArchSpec, ArchError> {
        let convs = encoder_convs(in_h, in_w, channels)?;
        Ok(ArchSpec {
            convs,
            hidden,
            deconvs: Vec::new(),
        })
    }
}

fn encoder_convs(
    in_h: usize,
    in_w: usize,
    channels: (usize, usize, usize),
) -> Result<Vec<ConvSpec>, ArchError> {
    let min_dim = in_h.min(in_w);
    let (c1, c2, c3) = channels;
    let convs = if min_dim >= 36 {
        vec![
            ConvSpec { out_ch: c1, kernel: (8, 8), stride: (4, 4) },
            ConvSpec { out_ch: c2, kernel: (4, 4), stride: (2, 2) },
            ConvSpec { out_ch: c3, kernel: (3, 3), stride: (1, 1) },
        ]
    } else {
        // very wide inputs (scroll-free corridors) take a wide-striding
        // first kernel so the conv cost stays proportionate
        let wide = in_w >= in_h * 5 / 2;
        let k1 = if wide { (3, 6) } else { (3, 3) };
        let s1 = (
            if in_h >= 10 { 2 } else { 1 },
            if wide { 4 } else if in_w >= 10 { 2 } else { 1 },
        );
        let mut convs = vec![ConvSpec { out_ch: c1, kernel: k1, stride: s1 }];
        let (mut h, mut w) = conv_output(in_h, in_w, k1, s1)
            .ok_or(ArchError::EncoderCollapse { stage: 0, h: in_h as i64 - k1.0 as i64, w: in_w as i64 - k1.1 as i64 })?;
        let s2 = (
            if h >= 7 { 2 } else { 1 },
            if w >= 7 { 2 } else { 1 },
        );
        convs.push(ConvSpec { out_ch: c2, kernel: (3, 3), stride: s2 });
        (h, w) = conv_output(h, w, (3, 3), s2)
            .ok_or(ArchError::EncoderCollapse { stage: 1, h: h as i64 - 3, w: w as i64 - 3 })?;
        let k3 = h.min(w).min(3).max(1);
        convs.push(ConvSpec { out_ch: c3, kernel: (k3, k3), stride: (1, 1) });
        convs
    };
    Ok(convs)
}

/// Per-axis kernel search: compose three transposed convolutions with the
/// given strides so the output size equals the target exactly.
fn fit_axis(from: usize, to: usize, strides: (usize, usize, usize), mirror: &[usize]) -> Option<[usize; 3]> {
    let mut best: Option<([usize; 3], usize)> = None;
    for k1 in 1..=9usize {
        let h1 = (from - 1) * strides.0 + k1;
        for k2 in 1..=9usize {
            let h2 = (h1 - 1) * strides.1 + k2;
            if h2 > to {
                break;
            }
            let rest = to as i64 - ((h2 - 1) * strides.2) as i64;
            if !(1..=9i64).contains(&rest) {
                continue;
            }
            let k3 = rest as usize;
            let ks = [k1, k2, k3];
            let dev: usize = ks
                .iter()
                .zip(mirror)
                .map(|(k, m)| k.abs_diff(*m))
                .sum();
            match best {
                Some((_, d)) if d <= dev => {}
                _ => best = Some((ks, dev)),
            }
        }
    }
    best.map(|(ks, _)| ks)
}

#[allow(clippy::type_complexity)]
fn fit_decoder(
    from: (usize, usize),
    to: (usize, usize),
    mirror: &[(usize, usize)],
) -> Result<Vec<((usize, usize), (usize, usize))>, ArchError> {
    let stride_prefs = [
        (1, 2, 2),
        (2, 2, 1),
        (1, 1, 2),
        (1, 2, 1),
        (2, 1, 1),
        (1, 1, 1),
        (2, 2, 2),
    ];
    let mirror_h: Vec<usize> = mirror.iter().map(|k| k.0).collect();
    let mirror_w: Vec<usize> = mirror.iter().map(|k| k.1).collect();
    for strides in stride_prefs {
        let kh = fit_axis(from.0, to.0, strides, &mirror_h);
        let kw = fit_axis(from.1, to.1, strides, &mirror_w);
        if let (Some(kh), Some(kw)) = (kh, kw) {
            let ss = [strides.0, strides.1, strides.2];
            return Ok((0..3)
                .map(|i| ((kh[i], kw[i]), (ss[i], ss[i])))
                .collect());
        }
    }
    Err(ArchError::NoDecoderFit { from, to })
}

/// Conv encoder + dense hidden + deconv decoder, relu in the encoder and
/// hidden stages, elu after each transposed convolution.
pub fn build_map_network<R: Rng>(
    spec: &ArchSpec,
    in_ch: usize,
    in_h: usize,
    in_w: usize,
    rng: &mut R,
) -> Result<Network, ArchError> {
    if spec.deconvs.is_empty() {
        return Err(ArchError::BadSpec("map network needs deconvs".into()));
    }
    let (bc, bh, bw) = spec.encoder_output(in_ch, in_h, in_w)?;
    let mut layers = Vec::new();
    let mut ch = in_ch;
    for c in &spec.convs {
        layers.push(Layer::Conv(Conv2d::new(ch, c.out_ch, c.kernel, c.stride, rng)));
        layers.push(Layer::Relu);
        ch = c.out_ch;
    }
    layers.push(Layer::Flatten);
    let flat = bc * bh * bw;
    layers.push(Layer::Dense(Dense::new(flat, spec.hidden, rng)));
    layers.push(Layer::Relu);
    layers.push(Layer::Dense(Dense::new(spec.hidden, flat, rng)));
    layers.push(Layer::Relu);
    layers.push(Layer::Reshape(bc, bh, bw));
    let mut ch = bc;
    for d in &spec.deconvs {
        layers.push(Layer::ConvT(ConvTranspose2d::new(ch, d.out_ch, d.kernel, d.stride, rng)));
        layers.push(Layer::Elu);
        ch = d.out_ch;
    }
    Ok(Network::new(layers))
}

/// Conv encoder + dense hidden + (dueling or plain) action-value head.
pub fn build_value_network<R: Rng>(
    spec: &ArchSpec,
    in_ch: usize,
    in_h: usize,
    in_w: usize,
    actions: usize,
    dueling: bool,
    rng: &mut R,
) -> Result<Network, ArchError> {
    let (bc, bh, bw) = spec.encoder_output(in_ch, in_h, in_w)?;
    let mut layers = Vec::new();
    let mut ch = in_ch;
    for c in &spec.convs {
        layers.push(Layer::Conv(Conv2d::new(ch, c.out_ch, c.kernel, c.stride, rng)));
        layers.push(Layer::Relu);
        ch = c.out_ch;
    }
    layers.push(Layer::Flatten);
    layers.push(Layer::Dense(Dense::new(bc * bh * bw, spec.hidden, rng)));
    layers.push(Layer::Relu);
    if dueling {
        layers.push(Layer::Dueling(Dueling::new(spec.hidden, actions, rng)));
    } else {
        layers.push(Layer::Dense(Dense::new(spec.hidden, actions, rng)));
    }
    Ok(Network::new(layers))
}
