/// Row-major H×W×C storage shared by the pixel, label and mask rasters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Grid<T> {
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) channels: usize,
    pub(crate) data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub(crate) fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub(crate) fn offset(&self, y: usize, x: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    pub(crate) fn cell(&self, y: usize, x: usize) -> &[T] {
        let o = self.offset(y, x);
        &self.data[o..o + self.channels]
    }

    pub(crate) fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                data.extend_from_slice(self.cell(y, x));
            }
        }
        Self { data, ..*self }
    }

    /// Columns `[x0, x0 + width)` and rows `[y0, y0 + height)`.
    pub(crate) fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Self {
        debug_assert!(y0 + height <= self.height && x0 + width <= self.width);
        let mut data = Vec::with_capacity(height * width * self.channels);
        for y in y0..y0 + height {
            let start = self.offset(y, x0);
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Self {
            height,
            width,
            channels: self.channels,
            data,
        }
    }

    /// Places `right` after `self` along the width axis. Heights must agree.
    pub(crate) fn hconcat(&self, right: &Self) -> Self {
        debug_assert_eq!(self.height, right.height);
        debug_assert_eq!(self.channels, right.channels);
        let row_l = self.width * self.channels;
        let row_r = right.width * right.channels;
        let mut data = Vec::with_capacity(self.data.len() + right.data.len());
        for y in 0..self.height {
            data.extend_from_slice(&self.data[y * row_l..(y + 1) * row_l]);
            data.extend_from_slice(&right.data[y * row_r..(y + 1) * row_r]);
        }
        Self {
            height: self.height,
            width: self.width + right.width,
            channels: self.channels,
            data,
        }
    }

    pub(crate) fn same_extent<U>(&self, other: &Grid<U>) -> bool {
        self.height == other.height && self.width == other.width
    }
}
