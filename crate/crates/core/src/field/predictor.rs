use rand::Rng;

use crate::autodiff::{glorot_uniform, Activation, Linear, Matrix, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

const LEAKY_SLOPE: f64 = 0.2;

/// 3×3, stride-2, pad-1 convolution over an image stored one pixel per row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conv3x3 {
    /// `out_ch × 9·in_ch`, patch order `(ky, kx, channel)`.
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Conv3x3 {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.insert(
            format!("{name}.weight"),
            glorot_uniform(out_ch, 9 * in_ch, rng),
        )?;
        let bias = store.insert(format!("{name}.bias"), Matrix::zeros(1, out_ch))?;
        Ok(Conv3x3 {
            weight,
            bias,
            in_ch,
            out_ch,
        })
    }

    pub fn forward<'a>(
        &self,
        tape: &mut Tape<'a>,
        store: &'a ParamStore,
        x: Var,
        h: usize,
        w: usize,
    ) -> Result<Var> {
        let cols = tape.im2col(x, h, w)?;
        let wv = tape.param(store, self.weight);
        let bv = tape.param(store, self.bias);
        tape.linear(cols, wv, Some(bv))
    }
}

/// Four stride-2 convolutions (128, 64, 32, 16 filters, LeakyReLU) and a
/// dense layer to the 25 flattened camera parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraPredictor {
    pub convs: Vec<Conv3x3>,
    pub dense: Linear,
    /// Input images are `res × res`.
    pub res: usize,
}

pub const PREDICTOR_FILTERS: [usize; 4] = [128, 64, 32, 16];
pub const CAMERA_PARAMS: usize = 25;

impl CameraPredictor {
    pub fn new(store: &mut ParamStore, name: &str, res: usize, rng: &mut impl Rng) -> Result<Self> {
        if res == 0 || res % 16 != 0 {
            return Err(Error::Config(format!(
                "camera predictor resolution {res} must be a multiple of 16"
            )));
        }
        let mut convs = Vec::new();
        let mut in_ch = 3;
        for (i, &f) in PREDICTOR_FILTERS.iter().enumerate() {
            convs.push(Conv3x3::new(
                store,
                &format!("{name}.conv{i}"),
                in_ch,
                f,
                rng,
            )?);
            in_ch = f;
        }
        let side = res / 16;
        let dense = Linear::new(
            store,
            &format!("{name}.dense"),
            side * side * in_ch,
            CAMERA_PARAMS,
            rng,
        )?;
        Ok(CameraPredictor { convs, dense, res })
    }

    /// `image` is `(h·w)×3`, pixels in row-major order.
    pub fn forward<'a>(
        &self,
        tape: &mut Tape<'a>,
        store: &'a ParamStore,
        image: Var,
        h: usize,
        w: usize,
    ) -> Result<Var> {
        if h != self.res || w != self.res || tape.value(image).shape() != (h * w, 3) {
            return Err(Error::shape(
                "camera_predict",
                format!(
                    "{:?} as {h}x{w}, predictor expects {}²×3",
                    tape.value(image).shape(),
                    self.res
                ),
            ));
        }
        let (mut x, mut hh, mut ww) = (image, h, w);
        for conv in &self.convs {
            let y = conv.forward(tape, store, x, hh, ww)?;
            x = tape.activate(y, Activation::LeakyRelu(LEAKY_SLOPE));
            hh /= 2;
            ww /= 2;
        }
        let flat_len = tape.value(x).len();
        let flat = tape.reshape(x, 1, flat_len)?;
        self.dense.forward(tape, store, flat)
    }

    /// Forward pass without recording gradients.
    pub fn predict(&self, store: &ParamStore, image: &Matrix) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let x = tape.constant(image);
        let out = self.forward(&mut tape, store, x, self.res, self.res)?;
        Ok(tape.value(out).data().to_vec())
    }
}
