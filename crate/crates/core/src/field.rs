//! Real-valued 1D/2D grids, forward-difference spatial gradients and the
//! edge-aware importance mask.
//!
//! Grids are row-major `f64`. A 2D grid has shape `[height, width, channels]`
//! and channels are treated independently. Forward differences use the
//! replicate boundary: the last position along each axis has gradient 0.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Line(usize),
    Grid {
        height: usize,
        width: usize,
        channels: usize,
    },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Line(n) => n,
            Shape::Grid {
                height,
                width,
                channels,
            } => height * width * channels,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of spatial axes (1 for a line, 2 for a grid).
    pub fn axes(&self) -> usize {
        match self {
            Shape::Line(_) => 1,
            Shape::Grid { .. } => 2,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Line(n) => write!(f, "[{n}]"),
            Shape::Grid {
                height,
                width,
                channels,
            } => write!(f, "[{height}, {width}, {channels}]"),
        }
    }
}

fn check_shape(expected: Shape, actual: Shape) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        })
    }
}

/// A finite real grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    shape: Shape,
    values: Vec<f64>,
}

impl Field {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{shape} ({} values)", shape.len()),
                actual: format!("{} values", values.len()),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Field { shape, values })
    }

    pub fn line(values: Vec<f64>) -> Result<Self> {
        Field::new(Shape::Line(values.len()), values)
    }

    pub fn grid(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        Field::new(
            Shape::Grid {
                height,
                width,
                channels,
            },
            values,
        )
    }

    pub fn zeros(shape: Shape) -> Self {
        Field::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        Field {
            shape,
            values: vec![value; shape.len()],
        }
    }

    /// Builds a field from values produced by finite arithmetic on finite
    /// inputs. Debug builds still check finiteness.
    pub(crate) fn from_raw(shape: Shape, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), shape.len());
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Field { shape, values }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Elementwise map. Panics if `op` produces a non-finite value.
    pub fn map(&self, op: impl Fn(f64) -> f64) -> Field {
        let values: Vec<f64> = self.values.iter().map(|&v| op(v)).collect();
        assert!(values.iter().all(|v| v.is_finite()), "map produced a non-finite value");
        Field {
            shape: self.shape,
            values,
        }
    }

    pub fn zip_map(&self, other: &Field, op: impl Fn(f64, f64) -> f64) -> Result<Field> {
        check_shape(self.shape, other.shape)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| op(a, b))
            .collect();
        Field::new(self.shape, values)
    }

    pub fn scale(&self, factor: f64) -> Field {
        self.map(|v| factor * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Per-axis gradient components, each with the source field's shape.
#[derive(Clone, Debug, PartialEq)]
pub struct GradField {
    components: Vec<Field>,
}

impl GradField {
    pub fn new(components: Vec<Field>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| invalid("components", "at least one axis is required"))?;
        let shape = first.shape();
        if components.len() != shape.axes() {
            return Err(invalid(
                "components",
                format!("{} components for a {}-axis shape", components.len(), shape.axes()),
            ));
        }
        for c in &components[1..] {
            check_shape(shape, c.shape())?;
        }
        Ok(GradField { components })
    }

    /// Single-axis gradient field from raw values.
    pub fn line(values: Vec<f64>) -> Result<Self> {
        GradField::new(vec![Field::line(values)?])
    }

    pub fn zeros(shape: Shape) -> Self {
        GradField {
            components: (0..shape.axes()).map(|_| Field::zeros(shape)).collect(),
        }
    }

    pub fn shape(&self) -> Shape {
        self.components[0].shape()
    }

    pub fn components(&self) -> &[Field] {
        &self.components
    }

    /// Total number of entries across all axes.
    pub fn len(&self) -> usize {
        self.components.iter().map(Field::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.components.iter().flat_map(|c| c.values().iter().copied())
    }

    pub fn map(&self, op: impl Fn(f64) -> f64) -> GradField {
        GradField {
            components: self.components.iter().map(|c| c.map(&op)).collect(),
        }
    }

    pub fn zip_map(&self, other: &GradField, op: impl Fn(f64, f64) -> f64) -> Result<GradField> {
        self.check_same_shape(other)?;
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.zip_map(b, &op))
            .collect::<Result<Vec<_>>>()?;
        Ok(GradField { components })
    }

    pub fn check_same_shape(&self, other: &GradField) -> Result<()> {
        check_shape(self.shape(), other.shape())
    }

    pub fn scale(&self, factor: f64) -> GradField {
        self.map(|v| factor * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.components.iter().fold(0.0, |m, c| m.max(c.max_abs()))
    }
}

/// Edge-aware per-axis weights in (0, 1]. For 2D grids each axis carries a
/// single-channel `[height, width, 1]` grid that broadcasts over channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceMask {
    weights: Vec<Field>,
}

impl ImportanceMask {
    /// All-ones mask matching `shape`.
    pub fn ones(shape: Shape) -> Self {
        let axis_shape = mask_shape(shape);
        ImportanceMask {
            weights: (0..shape.axes()).map(|_| Field::filled(axis_shape, 1.0)).collect(),
        }
    }

    pub fn weights(&self) -> &[Field] {
        &self.weights
    }
}

fn mask_shape(shape: Shape) -> Shape {
    match shape {
        Shape::Line(n) => Shape::Line(n),
        Shape::Grid { height, width, .. } => Shape::Grid {
            height,
            width,
            channels: 1,
        },
    }
}

/// Forward differences along each axis with a zero final entry.
///
/// 1D: one component. 2D: two components, the first along the width (x)
/// axis and the second along the height (y) axis.
pub fn spatial_gradient(f: &Field) -> GradField {
    let v = f.values();
    match f.shape() {
        Shape::Line(n) => {
            let mut g = vec![0.0; n];
            for i in 0..n.saturating_sub(1) {
                g[i] = v[i + 1] - v[i];
            }
            GradField {
                components: vec![Field::from_raw(f.shape(), g)],
            }
        }
        Shape::Grid {
            height,
            width,
            channels,
        } => {
            let idx = |h: usize, w: usize, c: usize| (h * width + w) * channels + c;
            let mut gx = vec![0.0; v.len()];
            let mut gy = vec![0.0; v.len()];
            for h in 0..height {
                for w in 0..width {
                    for c in 0..channels {
                        let i = idx(h, w, c);
                        if w + 1 < width {
                            gx[i] = v[idx(h, w + 1, c)] - v[i];
                        }
                        if h + 1 < height {
                            gy[i] = v[idx(h + 1, w, c)] - v[i];
                        }
                    }
                }
            }
            GradField {
                components: vec![Field::from_raw(f.shape(), gx), Field::from_raw(f.shape(), gy)],
            }
        }
    }
}

/// Adjoint of [`spatial_gradient`]: maps `∂L/∂(∇F)` to `∂L/∂F`.
///
/// Entries at the boundary positions (where the gradient is pinned to 0)
/// do not depend on `F` and contribute nothing.
pub fn gradient_adjoint(g: &GradField) -> Field {
    let shape = g.shape();
    let mut out = vec![0.0; shape.len()];
    match shape {
        Shape::Line(n) => {
            let gv = g.components[0].values();
            for i in 0..n.saturating_sub(1) {
                out[i + 1] += gv[i];
                out[i] -= gv[i];
            }
        }
        Shape::Grid {
            height,
            width,
            channels,
        } => {
            let idx = |h: usize, w: usize, c: usize| (h * width + w) * channels + c;
            let gx = g.components[0].values();
            let gy = g.components[1].values();
            for h in 0..height {
                for w in 0..width {
                    for c in 0..channels {
                        let i = idx(h, w, c);
                        if w + 1 < width {
                            out[idx(h, w + 1, c)] += gx[i];
                            out[i] -= gx[i];
                        }
                        if h + 1 < height {
                            out[idx(h + 1, w, c)] += gy[i];
                            out[i] -= gy[i];
                        }
                    }
                }
            }
        }
    }
    Field::from_raw(shape, out)
}

/// `W = exp(-alpha * |∇I|)` per axis. Multi-channel images average the
/// per-channel weights.
pub fn edge_mask(image: &Field, alpha: f64) -> Result<ImportanceMask> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(invalid("alpha", format!("must be finite and >= 0, got {alpha}")));
    }
    let grad = spatial_gradient(image);
    let weights = match image.shape() {
        Shape::Line(_) => grad
            .components
            .iter()
            .map(|c| c.map(|d| (-alpha * d.abs()).exp()))
            .collect(),
        Shape::Grid {
            height,
            width,
            channels,
        } => grad
            .components
            .iter()
            .map(|c| {
                let v = c.values();
                let avg: Vec<f64> = (0..height * width)
                    .map(|p| {
                        let pixel = &v[p * channels..(p + 1) * channels];
                        if channels == 1 {
                            (-alpha * pixel[0].abs()).exp()
                        } else {
                            pixel.iter().map(|d| (-alpha * d.abs()).exp()).sum::<f64>()
                                / channels as f64
                        }
                    })
                    .collect();
                Field::from_raw(mask_shape(image.shape()), avg)
            })
            .collect(),
    };
    Ok(ImportanceMask { weights })
}

/// Elementwise `W ⊙ g` per axis.
pub fn mask_gradients(g: &GradField, w: &ImportanceMask) -> Result<GradField> {
    let shape = g.shape();
    if w.weights.len() != g.components.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} mask axes", g.components.len()),
            actual: format!("{} mask axes", w.weights.len()),
        });
    }
    let components = g
        .components
        .iter()
        .zip(&w.weights)
        .map(|(gc, wc)| match (shape, wc.shape()) {
            (Shape::Line(_), _) => gc.zip_map(wc, |a, b| a * b),
            (
                Shape::Grid {
                    height,
                    width,
                    channels,
                },
                Shape::Grid {
                    height: mh,
                    width: mw,
                    channels: mc,
                },
            ) if mh == height && mw == width && (mc == 1 || mc == channels) => {
                let gv = gc.values();
                let wv = wc.values();
                let values = gv
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| {
                        let wi = if mc == 1 { i / channels } else { i };
                        a * wv[wi]
                    })
                    .collect();
                Field::new(shape, values)
            }
            (_, mshape) => Err(Error::ShapeMismatch {
                expected: mask_shape(shape).to_string(),
                actual: mshape.to_string(),
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradField { components })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_line_has_zero_gradient() {
        let f = Field::line(vec![5.0, 5.0, 5.0]).unwrap();
        assert_eq!(spatial_gradient(&f).components()[0].values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn forward_difference_with_replicate_boundary() {
        let f = Field::line(vec![1.0, 2.0, 4.0]).unwrap();
        assert_eq!(spatial_gradient(&f).components()[0].values(), &[1.0, 2.0, 0.0]);
    }

    #[test]
    fn grid_gradient_axes() {
        // 2x3 single channel: rows [0 1 3], [10 11 13]
        let f = Field::grid(2, 3, 1, vec![0.0, 1.0, 3.0, 10.0, 11.0, 13.0]).unwrap();
        let g = spatial_gradient(&f);
        assert_eq!(g.components()[0].values(), &[1.0, 2.0, 0.0, 1.0, 2.0, 0.0]);
        assert_eq!(g.components()[1].values(), &[10.0, 10.0, 10.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            Field::line(vec![0.0, f64::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(Field::line(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn mask_of_constant_image_is_ones() {
        let img = Field::grid(3, 4, 2, vec![0.7; 24]).unwrap();
        let m = edge_mask(&img, 3.0).unwrap();
        for w in m.weights() {
            assert!(w.values().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn mask_with_zero_alpha_is_ones() {
        let img = Field::line(vec![0.0, 3.0, -1.0, 8.0]).unwrap();
        let m = edge_mask(&img, 0.0).unwrap();
        assert!(m.weights()[0].values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mask_halves_unit_step_at_ln2() {
        let img = Field::line(vec![0.0, 1.0, 1.0]).unwrap();
        let m = edge_mask(&img, std::f64::consts::LN_2).unwrap();
        let w = m.weights()[0].values();
        assert!((w[0] - 0.5).abs() < 1e-15);
        assert_eq!(w[1], 1.0);
        assert_eq!(w[2], 1.0);
    }

    #[test]
    fn negative_alpha_rejected() {
        let img = Field::line(vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            edge_mask(&img, -0.1),
            Err(Error::InvalidParameter { name: "alpha", .. })
        ));
        assert!(edge_mask(&img, f64::NAN).is_err());
    }

    #[test]
    fn mask_multichannel_averages_weights() {
        // one row, two pixels, two channels; channel 0 jumps by 1, channel 1 flat
        let img = Field::grid(1, 2, 2, vec![0.0, 5.0, 1.0, 5.0]).unwrap();
        let m = edge_mask(&img, std::f64::consts::LN_2).unwrap();
        let wx = m.weights()[0].values();
        assert!((wx[0] - 0.75).abs() < 1e-15);
        assert_eq!(wx[1], 1.0);
    }

    #[test]
    fn mask_gradients_elementwise() {
        let g = GradField::line(vec![2.0, 4.0]).unwrap();
        let img = Field::line(vec![0.0, 1.0]).unwrap();
        let mut m = edge_mask(&img, 0.0).unwrap();
        m.weights[0] = Field::line(vec![0.5, 0.25]).unwrap();
        let out = mask_gradients(&g, &m).unwrap();
        assert_eq!(out.components()[0].values(), &[1.0, 1.0]);
    }

    #[test]
    fn mask_gradients_zero_and_identity() {
        let shape = Shape::Grid {
            height: 3,
            width: 3,
            channels: 2,
        };
        let zero = GradField::zeros(shape);
        let img = Field::grid(3, 3, 1, (0..9).map(f64::from).collect()).unwrap();
        let m = edge_mask(&img, 1.0).unwrap();
        assert_eq!(mask_gradients(&zero, &m).unwrap(), zero);
    }

    #[test]
    fn mask_gradients_shape_mismatch() {
        let g = GradField::line(vec![1.0, 2.0, 3.0]).unwrap();
        let m = ImportanceMask::ones(Shape::Line(2));
        assert!(matches!(mask_gradients(&g, &m), Err(Error::ShapeMismatch { .. })));
        let g2 = GradField::zeros(Shape::Grid {
            height: 2,
            width: 2,
            channels: 2,
        });
        let m2 = ImportanceMask::ones(Shape::Grid {
            height: 2,
            width: 3,
            channels: 1,
        });
        assert!(mask_gradients(&g2, &m2).is_err());
    }

    #[test]
    fn adjoint_matches_inner_product() {
        let f = Field::grid(3, 4, 2, (0..24).map(|i| ((i * 7) % 5) as f64 - 2.0).collect()).unwrap();
        let g = GradField::new(vec![
            Field::grid(3, 4, 2, (0..24).map(|i| (i % 3) as f64).collect()).unwrap(),
            Field::grid(3, 4, 2, (0..24).map(|i| ((i * 5) % 4) as f64 - 1.5).collect()).unwrap(),
        ])
        .unwrap();
        let lhs: f64 = spatial_gradient(&f).iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = f
            .values()
            .iter()
            .zip(gradient_adjoint(&g).values())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    fn line_field() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 2..40)
    }

    proptest! {
        #[test]
        fn gradient_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, (f, g) in (2usize..30).prop_flat_map(|n| {
            (prop::collection::vec(-5.0f64..5.0, n), prop::collection::vec(-5.0f64..5.0, n))
        })) {
            let ff = Field::line(f.clone()).unwrap();
            let gg = Field::line(g.clone()).unwrap();
            let combo = Field::line(f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect()).unwrap();
            let lhs = spatial_gradient(&combo);
            let rhs = spatial_gradient(&ff)
                .zip_map(&spatial_gradient(&gg), |x, y| a * x + b * y)
                .unwrap();
            for (l, r) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((l - r).abs() < 1e-12);
            }
        }

        #[test]
        fn constant_fields_are_annihilated(c in -100.0f64..100.0, h in 1usize..6, w in 1usize..6, ch in 1usize..3) {
            let f = Field::grid(h, w, ch, vec![c; h * w * ch]).unwrap();
            prop_assert!(spatial_gradient(&f).iter().all(|v| v == 0.0));
        }

        #[test]
        fn doubling_doubles_gradient(f in line_field()) {
            let ff = Field::line(f.clone()).unwrap();
            let g1 = spatial_gradient(&ff.scale(2.0));
            let g2 = spatial_gradient(&ff).scale(2.0);
            prop_assert_eq!(g1, g2);
        }

        #[test]
        fn mask_weights_in_unit_interval(img in line_field(), alpha in 0.0f64..5.0) {
            let image = Field::line(img.clone()).unwrap();
            let m = edge_mask(&image, alpha).unwrap();
            let grad = spatial_gradient(&image);
            for (w, d) in m.weights()[0].values().iter().zip(grad.iter()) {
                prop_assert!(*w > 0.0 && *w <= 1.0);
                if alpha * d.abs() == 0.0 {
                    prop_assert_eq!(*w, 1.0);
                } else if alpha * d.abs() > 1e-12 {
                    prop_assert!(*w < 1.0);
                }
            }
        }

        #[test]
        fn ones_mask_is_identity(f in line_field()) {
            let g = spatial_gradient(&Field::line(f).unwrap());
            let m = ImportanceMask::ones(g.shape());
            prop_assert_eq!(mask_gradients(&g, &m).unwrap(), g);
        }
    }
}
