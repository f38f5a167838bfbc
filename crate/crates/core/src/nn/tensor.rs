use crate::error::{Error, Result};
use crate::image::RgbImage;

use super::Element;

/// Dense `N×C×H×W` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 4], v: T) -> Self {
        Tensor {
            shape,
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "{} values for tensor shape {shape:?}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    /// Elements per batch item.
    #[inline]
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.plane()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn item(&self, n: usize) -> &[T] {
        let l = self.item_len();
        &self.data[n * l..(n + 1) * l]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let l = self.item_len();
        &mut self.data[n * l..(n + 1) * l]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Stack along the batch axis.
    pub fn concat_batch(parts: &[&Tensor<T>]) -> Self {
        let first = parts[0].shape;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        let mut n = 0;
        for p in parts {
            assert_eq!(&p.shape[1..], &first[1..], "batch concat shape mismatch");
            data.extend_from_slice(&p.data);
            n += p.shape[0];
        }
        Tensor {
            shape: [n, first[1], first[2], first[3]],
            data,
        }
    }

    /// Batch items `start..end`.
    pub fn slice_batch(&self, start: usize, end: usize) -> Self {
        let l = self.item_len();
        Tensor {
            shape: [end - start, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[start * l..end * l].to_vec(),
        }
    }

    /// Concatenate along channels.
    pub fn concat_channels(a: &Self, b: &Self) -> Self {
        assert_eq!(
            (a.shape[0], a.shape[2], a.shape[3]),
            (b.shape[0], b.shape[2], b.shape[3]),
            "channel concat shape mismatch"
        );
        let (la, lb) = (a.item_len(), b.item_len());
        let mut data = Vec::with_capacity(a.len() + b.len());
        for n in 0..a.shape[0] {
            data.extend_from_slice(&a.data[n * la..(n + 1) * la]);
            data.extend_from_slice(&b.data[n * lb..(n + 1) * lb]);
        }
        Tensor {
            shape: [a.shape[0], a.shape[1] + b.shape[1], a.shape[2], a.shape[3]],
            data,
        }
    }

    /// Inverse of [`Tensor::concat_channels`].
    pub fn split_channels(&self, first: usize) -> (Self, Self) {
        let [n, c, h, w] = self.shape;
        let plane = h * w;
        let mut a = Tensor::zeros([n, first, h, w]);
        let mut b = Tensor::zeros([n, c - first, h, w]);
        for i in 0..n {
            let src = self.item(i);
            a.item_mut(i).copy_from_slice(&src[..first * plane]);
            b.item_mut(i).copy_from_slice(&src[first * plane..]);
        }
        (a, b)
    }

    /// Pack RGB images (all the same size) into an `N×3×H×W` tensor.
    pub fn from_images(images: &[&RgbImage]) -> Result<Self> {
        let (w, h) = images
            .first()
            .map(|i| i.dims())
            .ok_or_else(|| Error::Empty("no images to pack".into()))?;
        let plane = w * h;
        let mut data = vec![T::zero(); images.len() * 3 * plane];
        for (n, img) in images.iter().enumerate() {
            if img.dims() != (w, h) {
                return Err(Error::Shape(format!("{:?} vs {:?}", img.dims(), (w, h))));
            }
            let dst = &mut data[n * 3 * plane..(n + 1) * 3 * plane];
            for (i, px) in img.pixels().enumerate() {
                for c in 0..3 {
                    dst[c * plane + i] = T::lit(px[c]);
                }
            }
        }
        Ok(Tensor {
            shape: [images.len(), 3, h, w],
            data,
        })
    }

    /// Unpack batch item `n` of a 3-channel tensor.
    pub fn to_image(&self, n: usize) -> RgbImage {
        assert_eq!(self.shape[1], 3, "expected 3 channels");
        let plane = self.plane();
        let src = self.item(n);
        RgbImage::from_fn(self.w(), self.h(), |x, y| {
            let i = y * self.w() + x;
            [src[i].as_f64(), src[plane + i].as_f64(), src[2 * plane + i].as_f64()]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_concat_split_inverse() {
        let a = Tensor::<f64>::from_vec([2, 1, 1, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f64>::from_vec([2, 2, 1, 2], (10..18).map(f64::from).collect()).unwrap();
        let cat = Tensor::concat_channels(&a, &b);
        assert_eq!(cat.shape(), [2, 3, 1, 2]);
        assert_eq!(&cat.data()[..6], &[1., 2., 10., 11., 12., 13.]);
        let (x, y) = cat.split_channels(1);
        assert_eq!(x, a);
        assert_eq!(y, b);
    }

    #[test]
    fn image_round_trip() {
        let img = RgbImage::from_fn(3, 2, |x, y| [x as f64, y as f64, 0.5]);
        let t = Tensor::<f64>::from_images(&[&img]).unwrap();
        assert_eq!(t.shape(), [1, 3, 2, 3]);
        assert_eq!(t.to_image(0), img);
    }
}
