use crate::packing::QuantTensor;

use super::{ConvOutput, ConvShape, KernelError};

/// Direct valid convolution in 64-bit arithmetic; the reference every
/// simulated variant is checked against.
pub fn conv2d_oracle(input: &QuantTensor, kernel: &QuantTensor) -> Result<ConvOutput, KernelError> {
    let shape = ConvShape::of(input, kernel)?;
    let (out_h, out_w) = (shape.out_h(), shape.out_w());
    let mut values = vec![0u64; out_h * out_w];
    for c in 0..shape.channels {
        let plane = input.plane(c);
        let taps = kernel.plane(c);
        for i in 0..shape.kernel_h {
            for j in 0..shape.kernel_w {
                let k = u64::from(taps[i * shape.kernel_w + j]);
                if k == 0 {
                    continue;
                }
                for y in 0..out_h {
                    let row = &plane[(y + i) * shape.width + j..][..out_w];
                    let out = &mut values[y * out_w..][..out_w];
                    for (o, &a) in out.iter_mut().zip(row) {
                        *o += k * u64::from(a);
                    }
                }
            }
        }
    }
    Ok(ConvOutput { out_h, out_w, value_bits: 64, values })
}
