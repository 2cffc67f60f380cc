//! im2col convolution kernels shared by the 2D and 3D ops.
//!
//! A 2D convolution is run as a 3D one with unit depth. Feature maps are
//! channels-last and kernels are `spatial..×Cin×Cout`, so a kernel is already
//! a `(k·k·k·Cin)×Cout` row-major matrix and a forward pass is one GEMM.

use super::TensorError;

/// Spatial zero padding of a convolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Padding {
    /// Pad so that a stride-1 convolution keeps the spatial extents.
    Same,
    /// No padding.
    Valid,
    /// Symmetric padding per spatial axis (2 values for 2D, 3 for 3D).
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
    pub cin: usize,
    pub cout: usize,
}

impl ConvGeom {
    /// Validates a convolution of `input` (spatial dims then channels) with
    /// `kernel` (spatial dims then Cin, Cout). `spatial` is 2 or 3.
    pub fn new(
        op: &'static str,
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        padding: &Padding,
    ) -> Result<Self, TensorError> {
        let spatial = input.len() - 1;
        if kernel.len() != spatial + 2 {
            return Err(TensorError::Rank {
                op,
                expected: spatial + 2,
                shape: kernel.to_vec(),
            });
        }
        let cin = input[spatial];
        if kernel[spatial] != cin {
            return Err(TensorError::ChannelMismatch {
                op,
                input: input.to_vec(),
                kernel: kernel.to_vec(),
            });
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument {
                op,
                reason: "stride must be positive".into(),
            });
        }
        let pads: Vec<usize> = match padding {
            Padding::Same => {
                if stride != 1 {
                    return Err(TensorError::InvalidArgument {
                        op,
                        reason: format!("\"same\" padding requires stride 1, got {stride}"),
                    });
                }
                if let Some(&k) = kernel[..spatial].iter().find(|&&k| k % 2 == 0) {
                    return Err(TensorError::InvalidArgument {
                        op,
                        reason: format!("\"same\" padding requires odd kernel extents, got {k}"),
                    });
                }
                kernel[..spatial].iter().map(|k| (k - 1) / 2).collect()
            }
            Padding::Valid => vec![0; spatial],
            Padding::Explicit(p) => {
                if p.len() != spatial {
                    return Err(TensorError::InvalidArgument {
                        op,
                        reason: format!("expected {spatial} padding values, got {}", p.len()),
                    });
                }
                p.clone()
            }
        };

        // Lift to three spatial axes; 2D gets a unit depth axis in front.
        let lift = |v: &[usize], fill: usize| -> [usize; 3] {
            if spatial == 2 {
                [fill, v[0], v[1]]
            } else {
                [v[0], v[1], v[2]]
            }
        };
        let input3 = lift(&input[..spatial], 1);
        let kernel3 = lift(&kernel[..spatial], 1);
        let pad3 = lift(&pads, 0);
        let stride3 = if spatial == 2 {
            [1, stride, stride]
        } else {
            [stride; 3]
        };
        let mut output = [0; 3];
        for a in 0..3 {
            let span = input3[a] + 2 * pad3[a];
            if span < kernel3[a] {
                return Err(TensorError::InvalidArgument {
                    op,
                    reason: format!(
                        "kernel {:?} does not fit padded input {:?}",
                        kernel,
                        input
                    ),
                });
            }
            output[a] = (span - kernel3[a]) / stride3[a] + 1;
        }
        Ok(Self {
            input: input3,
            kernel: kernel3,
            stride: stride3,
            pad: pad3,
            output,
            cin,
            cout: kernel[spatial + 1],
        })
    }

    pub fn rows(&self) -> usize {
        self.output.iter().product()
    }

    pub fn cols(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.cin
    }

    /// Output shape in the caller's rank (2D drops the unit depth axis).
    pub fn output_shape(&self, spatial: usize) -> Vec<usize> {
        let [d, h, w] = self.output;
        if spatial == 2 {
            vec![h, w, self.cout]
        } else {
            vec![d, h, w, self.cout]
        }
    }

    /// Visits every (row, column-block start, input offset) triple of the
    /// im2col matrix; `None` marks a zero-padding position.
    #[inline]
    fn for_each_patch(&self, mut f: impl FnMut(usize, usize, Option<usize>)) {
        let [di, hi, wi] = self.input;
        let [kd, kh, kw] = self.kernel;
        let [od, oh, ow] = self.output;
        let cin = self.cin;
        let cols = self.cols();
        let mut row = 0;
        for z in 0..od {
            for y in 0..oh {
                for x in 0..ow {
                    let base = row * cols;
                    let mut block = 0;
                    for a in 0..kd {
                        let iz = (z * self.stride[0] + a) as isize - self.pad[0] as isize;
                        for b in 0..kh {
                            let iy = (y * self.stride[1] + b) as isize - self.pad[1] as isize;
                            for c in 0..kw {
                                let ix =
                                    (x * self.stride[2] + c) as isize - self.pad[2] as isize;
                                let inside = iz >= 0
                                    && iy >= 0
                                    && ix >= 0
                                    && (iz as usize) < di
                                    && (iy as usize) < hi
                                    && (ix as usize) < wi;
                                let src = inside.then(|| {
                                    ((iz as usize * hi + iy as usize) * wi + ix as usize) * cin
                                });
                                f(row, base + block, src);
                                block += cin;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    pub fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let cin = self.cin;
        let mut col = vec![0.0; self.rows() * self.cols()];
        self.for_each_patch(|_, dst, src| {
            if let Some(s) = src {
                col[dst..dst + cin].copy_from_slice(&input[s..s + cin]);
            }
        });
        col
    }

    pub fn col2im_add(&self, col: &[f64], grad_input: &mut [f64]) {
        let cin = self.cin;
        self.for_each_patch(|_, src, dst| {
            if let Some(d) = dst {
                for (g, c) in grad_input[d..d + cin].iter_mut().zip(&col[src..src + cin]) {
                    *g += c;
                }
            }
        });
    }
}

/// Row-major matrix view for [`gemm`]; `transposed` reads the stored
/// `rows×cols` buffer as its transpose.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer length");
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize, isize, isize) {
        if self.transposed {
            (self.cols, self.rows, 1, self.cols as isize)
        } else {
            (self.rows, self.cols, self.cols as isize, 1)
        }
    }
}

/// `c = beta·c + a·b` with `c` row-major `m×n`.
pub(crate) fn gemm(a: Mat<'_>, b: Mat<'_>, beta: f64, c: &mut [f64]) {
    let (m, k, rsa, csa) = a.logical();
    let (k2, n, rsb, csb) = b.logical();
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!(c.len(), m * n, "gemm output length");
    // SAFETY: the asserts above and in `Mat::new` guarantee that every index
    // formed from (m, k, n) and the strides stays inside the three buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn forward(geom: &ConvGeom, input: &[f64], kernel: &[f64]) -> Vec<f64> {
    let col = geom.im2col(input);
    let mut out = vec![0.0; geom.rows() * geom.cout];
    gemm(
        Mat::new(&col, geom.rows(), geom.cols()),
        Mat::new(kernel, geom.cols(), geom.cout),
        0.0,
        &mut out,
    );
    out
}

/// Accumulates input and kernel gradients for an upstream gradient `grad_out`.
pub(crate) fn backward(
    geom: &ConvGeom,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    grad_input: Option<&mut [f64]>,
    grad_kernel: Option<&mut [f64]>,
) {
    let rows = geom.rows();
    let cols = geom.cols();
    let dout = Mat::new(grad_out, rows, geom.cout);
    if let Some(gk) = grad_kernel {
        let col = geom.im2col(input);
        gemm(Mat::new(&col, rows, cols).t(), dout, 1.0, gk);
    }
    if let Some(gi) = grad_input {
        let mut dcol = vec![0.0; rows * cols];
        gemm(dout, Mat::new(kernel, cols, geom.cout).t(), 0.0, &mut dcol);
        geom.col2im_add(&dcol, gi);
    }
}
