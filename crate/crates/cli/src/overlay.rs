use image::{Rgb, RgbImage};
use voxscore::{BrainMask, Volume};

const SCALE: u32 = 4;

/// Axial slice with the most ground-truth voxels, or the middle one.
pub fn pick_slice(gt: &BrainMask) -> usize {
    let n = gt.size;
    let counts: Vec<usize> = gt.data.chunks(n * n).map(|s| s.iter().filter(|&&v| v != 0).count()).collect();
    match counts.iter().max() {
        Some(&best) if best > 0 => counts.iter().position(|&c| c == best).unwrap(),
        _ => n / 2,
    }
}

/// Grayscale background (the intensity volume when given, else the map),
/// predicted voxels tinted red, ground-truth outline in green.
pub fn render(background: Option<&Volume>, map: &Volume, gt: &BrainMask, threshold: f32) -> RgbImage {
    let n = map.size;
    let x = pick_slice(gt);
    let bg = background.unwrap_or(map);
    let at = |v: &Volume, y: usize, z: usize| v.data[(x * n + y) * n + z];
    let gt_at = |y: usize, z: usize| gt.data[(x * n + y) * n + z] != 0;
    let max = (0..n * n).map(|i| at(bg, i / n, i % n)).fold(0.0f32, f32::max).max(f32::MIN_POSITIVE);

    let mut img = RgbImage::new(n as u32 * SCALE, n as u32 * SCALE);
    for y in 0..n {
        for z in 0..n {
            let g = (at(bg, y, z).max(0.0) / max * 255.0) as u8;
            let mut px = [g, g, g];
            let s = at(map, y, z);
            if s > 0.0 && s >= threshold {
                px = [((g as u16 + 255) / 2) as u8, g / 2, g / 2];
            }
            if gt_at(y, z) {
                let edge = y == 0 || z == 0 || y + 1 == n || z + 1 == n || !gt_at(y - 1, z) || !gt_at(y + 1, z) || !gt_at(y, z - 1) || !gt_at(y, z + 1);
                if edge {
                    px = [0, 220, 0];
                }
            }
            for dy in 0..SCALE {
                for dz in 0..SCALE {
                    img.put_pixel(z as u32 * SCALE + dz, y as u32 * SCALE + dy, Rgb(px));
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_the_densest_slice() {
        let mut gt = BrainMask::filled(4, false);
        gt.data[2 * 16 + 5] = 1;
        gt.data[2 * 16 + 6] = 1;
        gt.data[16 + 1] = 1;
        assert_eq!(pick_slice(&gt), 2);
        assert_eq!(pick_slice(&BrainMask::filled(4, false)), 2);
    }

    #[test]
    fn outline_and_prediction_colours() {
        let mut gt = BrainMask::filled(3, false);
        gt.data[9 + 4] = 1;
        let mut map = Volume::zeros(3);
        map.data[9 + 4] = 1.0;
        let img = render(None, &map, &gt, 0.5);
        assert_eq!(img.dimensions(), (12, 12));
        assert_eq!(img.get_pixel(4, 4), &Rgb([0, 220, 0]));
        assert_eq!(img.get_pixel(0, 0), &Rgb([0, 0, 0]));
    }
}
