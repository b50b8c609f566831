//! Backbone parameter layout, generic over the element so the same structure
//! holds owned matrices and their tape bindings.

use rand::Rng;

use super::BackboneConfig;
use crate::numerics::{Matrix, Tape, Var};

macro_rules! leaf_group {
    ($(#[$meta:meta])* $name:ident { $($field:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name<T> {
            $(pub $field: T,)+
        }

        impl<T> $name<T> {
            pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> $name<U> {
                $name { $($field: f(&self.$field),)+ }
            }

            pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a T)) {
                $(f(format!("{prefix}.{}", stringify!($field)), &self.$field);)+
            }

            pub fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(&'a mut T)) {
                $(f(&mut self.$field);)+
            }
        }
    };
}
pub(crate) use leaf_group;

leaf_group!(
    /// Multi-head attention projections. Weights are `d_model × d_model`,
    /// biases `1 × d_model`. The key projection has no bias: it would add the
    /// same score to every key of a query, which softmax cancels.
    Attention { wq, bq, wk, wv, bv, wo, bo }
);

leaf_group!(FeedForward { w1, b1, w2, b2 });

leaf_group!(Norm { gain, bias });

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<T> {
    pub attn_norm: Norm<T>,
    pub attn: Attention<T>,
    pub ff_norm: Norm<T>,
    pub ff: FeedForward<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer<T> {
    pub self_norm: Norm<T>,
    pub self_attn: Attention<T>,
    pub cross_norm: Norm<T>,
    pub cross_attn: Attention<T>,
    pub ff_norm: Norm<T>,
    pub ff: FeedForward<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub embedding: T,
    pub encoder: Vec<EncoderLayer<T>>,
    pub encoder_norm: Norm<T>,
    pub decoder: Vec<DecoderLayer<T>>,
    pub decoder_norm: Norm<T>,
    pub out_proj: T,
    pub out_bias: T,
}

impl<T> EncoderLayer<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> EncoderLayer<U> {
        EncoderLayer {
            attn_norm: self.attn_norm.map(f),
            attn: self.attn.map(f),
            ff_norm: self.ff_norm.map(f),
            ff: self.ff.map(f),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a T)) {
        self.attn_norm.visit(&format!("{prefix}.attn_norm"), f);
        self.attn.visit(&format!("{prefix}.attn"), f);
        self.ff_norm.visit(&format!("{prefix}.ff_norm"), f);
        self.ff.visit(&format!("{prefix}.ff"), f);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(&'a mut T)) {
        self.attn_norm.visit_mut(f);
        self.attn.visit_mut(f);
        self.ff_norm.visit_mut(f);
        self.ff.visit_mut(f);
    }
}

impl<T> DecoderLayer<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> DecoderLayer<U> {
        DecoderLayer {
            self_norm: self.self_norm.map(f),
            self_attn: self.self_attn.map(f),
            cross_norm: self.cross_norm.map(f),
            cross_attn: self.cross_attn.map(f),
            ff_norm: self.ff_norm.map(f),
            ff: self.ff.map(f),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a T)) {
        self.self_norm.visit(&format!("{prefix}.self_norm"), f);
        self.self_attn.visit(&format!("{prefix}.self_attn"), f);
        self.cross_norm.visit(&format!("{prefix}.cross_norm"), f);
        self.cross_attn.visit(&format!("{prefix}.cross_attn"), f);
        self.ff_norm.visit(&format!("{prefix}.ff_norm"), f);
        self.ff.visit(&format!("{prefix}.ff"), f);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(&'a mut T)) {
        self.self_norm.visit_mut(f);
        self.self_attn.visit_mut(f);
        self.cross_norm.visit_mut(f);
        self.cross_attn.visit_mut(f);
        self.ff_norm.visit_mut(f);
        self.ff.visit_mut(f);
    }
}

impl<T> Weights<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Weights<U> {
        Weights {
            embedding: f(&self.embedding),
            encoder: self.encoder.iter().map(|l| l.map(f)).collect(),
            encoder_norm: self.encoder_norm.map(f),
            decoder: self.decoder.iter().map(|l| l.map(f)).collect(),
            decoder_norm: self.decoder_norm.map(f),
            out_proj: f(&self.out_proj),
            out_bias: f(&self.out_bias),
        }
    }

    /// Visits every tensor with a stable dotted name, in a fixed order.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a T)) {
        f("embedding".into(), &self.embedding);
        for (i, l) in self.encoder.iter().enumerate() {
            l.visit(&format!("encoder.{i}"), f);
        }
        self.encoder_norm.visit("encoder_norm", f);
        for (i, l) in self.decoder.iter().enumerate() {
            l.visit(&format!("decoder.{i}"), f);
        }
        self.decoder_norm.visit("decoder_norm", f);
        f("out_proj".into(), &self.out_proj);
        f("out_bias".into(), &self.out_bias);
    }

    /// Same order as [`Weights::visit`].
    pub fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(&'a mut T)) {
        f(&mut self.embedding);
        for l in &mut self.encoder {
            l.visit_mut(f);
        }
        self.encoder_norm.visit_mut(f);
        for l in &mut self.decoder {
            l.visit_mut(f);
        }
        self.decoder_norm.visit_mut(f);
        f(&mut self.out_proj);
        f(&mut self.out_bias);
    }

    pub fn tensors(&self) -> Vec<&T> {
        let mut out = Vec::new();
        self.visit(&mut |_, t| out.push(t));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        self.visit_mut(&mut |t| out.push(t));
        out
    }
}

impl Weights<Matrix> {
    pub fn init<R: Rng + ?Sized>(cfg: &BackboneConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let f = cfg.d_ff;
        let v = cfg.vocab_size as usize;
        let proj_std = 1.0 / (d as f64).sqrt();
        let attention = |rng: &mut R| Attention {
            wq: Matrix::randn(d, d, proj_std, rng),
            bq: Matrix::zeros(1, d),
            wk: Matrix::randn(d, d, proj_std, rng),
            wv: Matrix::randn(d, d, proj_std, rng),
            bv: Matrix::zeros(1, d),
            wo: Matrix::randn(d, d, proj_std, rng),
            bo: Matrix::zeros(1, d),
        };
        let norm = || Norm {
            gain: Matrix::filled(1, d, 1.0),
            bias: Matrix::zeros(1, d),
        };
        let feed_forward = |rng: &mut R| FeedForward {
            w1: Matrix::randn(d, f, proj_std, rng),
            b1: Matrix::zeros(1, f),
            w2: Matrix::randn(f, d, 1.0 / (f as f64).sqrt(), rng),
            b2: Matrix::zeros(1, d),
        };

        let embedding = Matrix::randn(v, d, 1.0, rng);
        let encoder = (0..cfg.n_enc_layers)
            .map(|_| EncoderLayer {
                attn_norm: norm(),
                attn: attention(rng),
                ff_norm: norm(),
                ff: feed_forward(rng),
            })
            .collect();
        let decoder = (0..cfg.n_dec_layers)
            .map(|_| DecoderLayer {
                self_norm: norm(),
                self_attn: attention(rng),
                cross_norm: norm(),
                cross_attn: attention(rng),
                ff_norm: norm(),
                ff: feed_forward(rng),
            })
            .collect();
        Weights {
            embedding,
            encoder,
            encoder_norm: norm(),
            decoder,
            decoder_norm: norm(),
            out_proj: Matrix::randn(d, v, 0.5 * proj_std, rng),
            out_bias: Matrix::zeros(1, v),
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Weights<Var> {
        self.map(&mut |m: &Matrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        })
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }
}
