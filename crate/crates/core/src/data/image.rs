use crate::error::{shape_err, Result};

/// Channel-major (CHW) image buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T = f32> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Copy> Image<T> {
    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(shape_err((channels, height, width), data.len()));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Self {
        Self { channels, height, width, data: vec![value; channels * height * width] }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Build an image by evaluating `f(c, y, x)` at every pixel.
    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { channels, height, width, data }
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.channels, self.height, self.width, |c, y, x| self.get(c, y, self.width - 1 - x))
    }

    /// `side_h x side_w` window with top-left corner `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Self {
        assert!(top + h <= self.height && left + w <= self.width, "crop window outside image");
        Self::from_fn(self.channels, h, w, |c, y, x| self.get(c, top + y, left + x))
    }
}

impl Image<f32> {
    /// Bilinear resampling with half-pixel centres and edge clamping. The
    /// sampling grid is mirror-symmetric, so resizing commutes with flips and
    /// 90-degree rotations of square images.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let taps = |dst: usize, src_len: usize, dst_len: usize| -> (usize, usize, f32) {
            let scale = src_len as f64 / dst_len as f64;
            let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            (lo, hi, (pos - lo as f64) as f32)
        };
        let ys: Vec<_> = (0..height).map(|y| taps(y, self.height, height)).collect();
        let xs: Vec<_> = (0..width).map(|x| taps(x, self.width, width)).collect();
        Self::from_fn(self.channels, height, width, |c, y, x| {
            let (y0, y1, fy) = ys[y];
            let (x0, x1, fx) = xs[x];
            let top = self.get(c, y0, x0) * (1.0 - fx) + self.get(c, y0, x1) * fx;
            let bottom = self.get(c, y1, x0) * (1.0 - fx) + self.get(c, y1, x1) * fx;
            top * (1.0 - fy) + bottom * fy
        })
    }
}
