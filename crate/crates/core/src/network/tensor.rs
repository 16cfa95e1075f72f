/// Dense activation block in `(channel, frequency, time)` order. Vectors are
/// stored as `(n, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub freq: usize,
    pub time: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor { channels: shape.channels, freq: shape.freq, time: shape.time, data: vec![0.0; shape.len()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), shape.len(), "tensor data does not match shape {shape}");
        Tensor { channels: shape.channels, freq: shape.freq, time: shape.time, data }
    }

    /// Builds a tensor from a spliced window stored in `(w, f, c)` order.
    pub fn from_spliced(window: &[f64], time: usize, freq: usize, channels: usize) -> Self {
        assert_eq!(window.len(), time * freq * channels);
        let mut data = vec![0.0; window.len()];
        for w in 0..time {
            for f in 0..freq {
                for c in 0..channels {
                    data[(c * freq + f) * time + w] = window[(w * freq + f) * channels + c];
                }
            }
        }
        Tensor { channels, freq, time, data }
    }

    pub fn shape(&self) -> Shape {
        Shape { channels: self.channels, freq: self.freq, time: self.time }
    }

    #[inline]
    pub fn idx(&self, c: usize, f: usize, t: usize) -> usize {
        (c * self.freq + f) * self.time + t
    }

    #[inline]
    pub fn at(&self, c: usize, f: usize, t: usize) -> f64 {
        self.data[self.idx(c, f, t)]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub freq: usize,
    pub time: usize,
}

impl Shape {
    pub fn new(channels: usize, freq: usize, time: usize) -> Self {
        Shape { channels, freq, time }
    }

    pub fn vector(n: usize) -> Self {
        Shape { channels: n, freq: 1, time: 1 }
    }

    pub fn len(&self) -> usize {
        self.channels * self.freq * self.time
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.freq, self.time)
    }
}
