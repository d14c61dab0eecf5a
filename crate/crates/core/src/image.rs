/// Row-major metric depth map; `0.0` marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthImage {
    pub const INVALID: f64 = 0.0;

    /// An all-invalid image.
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![Self::INVALID; width * height] }
    }

    /// Wraps `data`; negative and non-finite entries are stored as invalid.
    ///
    /// # Panics
    /// If `data.len() != width * height`.
    pub fn from_vec(width: usize, height: usize, mut data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "depth buffer length does not match {width}x{height}");
        for v in &mut data {
            if !(v.is_finite() && *v > 0.0) {
                *v = Self::INVALID;
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn is_valid_at(&self, x: usize, y: usize) -> bool {
        self.get(x, y) > 0.0
    }

    /// Sets pixel `(x, y)`; anything not finite and positive becomes invalid.
    pub fn set(&mut self, x: usize, y: usize, depth: f64) {
        self.data[y * self.width + x] = if depth.is_finite() && depth > 0.0 { depth } else { Self::INVALID };
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }
}
