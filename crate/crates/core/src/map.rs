use sfas_autograd::{Element, Tensor};

/// Single-channel H×W field stored row-major: images, disparities, teacher maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Map {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Map {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(height * width, data.len(), "map data length");
        Self { height, width, data }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![0.0; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(height, width, data)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Shape `[1, 1, H, W]`.
    pub fn to_tensor<F: Element>(&self) -> Tensor<F> {
        Tensor::from_fn(&[1, 1, self.height, self.width], |i| F::from_f64(self.data[i] as f64))
    }

    /// Reads plane `index` of a tensor whose two trailing axes are H, W.
    pub fn from_tensor<F: Element>(t: &Tensor<F>, index: usize) -> Self {
        let s = t.shape();
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let plane = &t.data()[index * h * w..(index + 1) * h * w];
        Self::new(h, w, plane.iter().map(|v| v.as_f64() as f32).collect())
    }
}

/// Stacks maps of equal size into `[N, 1, H, W]`.
pub fn stack<F: Element>(maps: &[&Map]) -> Tensor<F> {
    let (h, w) = maps[0].dims();
    let mut data = Vec::with_capacity(maps.len() * h * w);
    for m in maps {
        assert_eq!(m.dims(), (h, w), "stacked maps differ in size");
        data.extend(m.data.iter().map(|&v| F::from_f64(v as f64)));
    }
    Tensor::new(&[maps.len(), 1, h, w], data).expect("stack shape")
}
