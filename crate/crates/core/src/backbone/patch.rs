use crate::error::{invalid, shape_err, Result};
use crate::numcore::Tensor;

/// Rearranges `(B, H, W, c)` images into `(B, H/p, W/p, p·p·c)` patch
/// vectors, each ordered by row offset, column offset, then channel.
pub fn patchify(images: &Tensor, patch: usize) -> Result<Tensor> {
    let s = images.shape();
    if s.len() != 4 {
        return Err(shape_err(format!("images must be (B, H, W, c), got {s:?}")));
    }
    let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(invalid(format!("patch size {patch} does not divide {h}×{w}")));
    }
    let (gh, gw) = (h / patch, w / patch);
    let src = images.data();
    let mut out = Vec::with_capacity(images.len());
    for n in 0..b {
        for py in 0..gh {
            for px in 0..gw {
                for dy in 0..patch {
                    let row = ((n * h + py * patch + dy) * w + px * patch) * c;
                    out.extend_from_slice(&src[row..row + patch * c]);
                }
            }
        }
    }
    Tensor::from_vec(vec![b, gh, gw, patch * patch * c], out)
}
