//! Heatmap rendering of localization maps.

use std::path::Path;

use crate::data::netpbm;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Dark purple through orange to pale yellow. A value `v` in `[0, 1]` maps
/// to entry `round(v * 255)`, so 0 is entry 0, 0.5 is entry 128 and 1 is
/// entry 255.
pub const COLORMAP: [[u8; 3]; 256] = [
    [0, 0, 4],
    [1, 0, 6],
    [2, 1, 8],
    [3, 1, 10],
    [4, 1, 12],
    [5, 2, 14],
    [6, 2, 16],
    [7, 3, 18],
    [7, 3, 20],
    [8, 3, 22],
    [9, 4, 25],
    [10, 4, 27],
    [11, 4, 29],
    [12, 5, 31],
    [13, 5, 33],
    [14, 5, 35],
    [15, 6, 37],
    [16, 6, 39],
    [17, 7, 41],
    [18, 7, 43],
    [19, 7, 45],
    [20, 8, 47],
    [21, 8, 49],
    [22, 8, 51],
    [22, 9, 53],
    [23, 9, 55],
    [24, 9, 57],
    [25, 10, 59],
    [26, 10, 61],
    [27, 10, 63],
    [28, 11, 66],
    [29, 11, 68],
    [30, 12, 70],
    [31, 12, 72],
    [32, 12, 73],
    [34, 12, 74],
    [36, 12, 75],
    [38, 12, 77],
    [40, 12, 78],
    [41, 13, 79],
    [43, 13, 80],
    [45, 13, 81],
    [47, 13, 83],
    [48, 13, 84],
    [50, 13, 85],
    [52, 13, 86],
    [54, 13, 88],
    [55, 13, 89],
    [57, 13, 90],
    [59, 14, 91],
    [61, 14, 92],
    [62, 14, 94],
    [64, 14, 95],
    [66, 14, 96],
    [68, 14, 97],
    [70, 14, 98],
    [71, 14, 100],
    [73, 14, 101],
    [75, 14, 102],
    [77, 15, 103],
    [78, 15, 104],
    [80, 15, 106],
    [82, 15, 107],
    [84, 15, 108],
    [85, 15, 109],
    [87, 16, 109],
    [88, 16, 109],
    [90, 17, 109],
    [92, 17, 109],
    [93, 18, 109],
    [95, 19, 108],
    [96, 19, 108],
    [98, 20, 108],
    [99, 20, 108],
    [101, 21, 108],
    [102, 21, 108],
    [104, 22, 108],
    [105, 23, 108],
    [107, 23, 108],
    [108, 24, 108],
    [110, 24, 108],
    [112, 25, 107],
    [113, 25, 107],
    [115, 26, 107],
    [116, 27, 107],
    [118, 27, 107],
    [119, 28, 107],
    [121, 28, 107],
    [122, 29, 107],
    [124, 29, 107],
    [125, 30, 107],
    [127, 31, 107],
    [128, 31, 106],
    [130, 32, 106],
    [132, 32, 106],
    [133, 33, 106],
    [135, 33, 106],
    [136, 34, 106],
    [138, 35, 105],
    [139, 35, 105],
    [141, 36, 104],
    [143, 37, 103],
    [144, 37, 102],
    [146, 38, 102],
    [148, 39, 101],
    [149, 39, 100],
    [151, 40, 100],
    [153, 41, 99],
    [154, 41, 98],
    [156, 42, 98],
    [157, 43, 97],
    [159, 43, 96],
    [161, 44, 96],
    [162, 45, 95],
    [164, 45, 94],
    [166, 46, 94],
    [167, 46, 93],
    [169, 47, 92],
    [170, 48, 92],
    [172, 48, 91],
    [174, 49, 90],
    [175, 50, 89],
    [177, 50, 89],
    [179, 51, 88],
    [180, 52, 87],
    [182, 52, 87],
    [184, 53, 86],
    [185, 54, 85],
    [187, 55, 84],
    [188, 56, 83],
    [189, 57, 82],
    [190, 58, 81],
    [192, 59, 80],
    [193, 60, 79],
    [194, 61, 78],
    [195, 62, 77],
    [197, 63, 76],
    [198, 64, 75],
    [199, 65, 74],
    [200, 66, 73],
    [201, 67, 72],
    [203, 68, 71],
    [204, 69, 70],
    [205, 70, 69],
    [206, 71, 68],
    [208, 72, 67],
    [209, 74, 66],
    [210, 75, 65],
    [211, 76, 64],
    [213, 77, 63],
    [214, 78, 62],
    [215, 79, 61],
    [216, 80, 60],
    [218, 81, 59],
    [219, 82, 58],
    [220, 83, 57],
    [221, 84, 56],
    [222, 85, 55],
    [224, 86, 54],
    [225, 87, 53],
    [226, 88, 52],
    [227, 90, 51],
    [228, 91, 49],
    [229, 93, 48],
    [229, 95, 47],
    [230, 96, 45],
    [231, 98, 44],
    [232, 100, 42],
    [232, 101, 41],
    [233, 103, 40],
    [234, 105, 38],
    [234, 106, 37],
    [235, 108, 36],
    [236, 110, 34],
    [237, 111, 33],
    [237, 113, 32],
    [238, 115, 30],
    [239, 116, 29],
    [239, 118, 28],
    [240, 120, 26],
    [241, 121, 25],
    [242, 123, 24],
    [242, 125, 22],
    [243, 126, 21],
    [244, 128, 20],
    [245, 130, 18],
    [245, 131, 17],
    [246, 133, 16],
    [247, 135, 14],
    [247, 136, 13],
    [248, 138, 12],
    [249, 140, 10],
    [249, 141, 11],
    [249, 143, 12],
    [249, 145, 13],
    [249, 147, 15],
    [249, 149, 16],
    [249, 151, 17],
    [249, 152, 18],
    [249, 154, 19],
    [249, 156, 21],
    [249, 158, 22],
    [249, 160, 23],
    [249, 162, 24],
    [249, 163, 25],
    [249, 165, 27],
    [249, 167, 28],
    [249, 169, 29],
    [249, 171, 30],
    [249, 173, 31],
    [249, 175, 33],
    [249, 176, 34],
    [249, 178, 35],
    [249, 180, 36],
    [249, 182, 37],
    [249, 184, 39],
    [249, 186, 40],
    [249, 187, 41],
    [249, 189, 42],
    [249, 191, 43],
    [249, 193, 45],
    [249, 195, 46],
    [249, 197, 47],
    [249, 198, 48],
    [249, 200, 50],
    [249, 202, 52],
    [249, 204, 56],
    [249, 206, 60],
    [249, 207, 63],
    [249, 209, 67],
    [250, 211, 71],
    [250, 213, 75],
    [250, 214, 78],
    [250, 216, 82],
    [250, 218, 86],
    [250, 220, 89],
    [250, 221, 93],
    [250, 223, 97],
    [250, 225, 101],
    [250, 227, 104],
    [251, 229, 108],
    [251, 230, 112],
    [251, 232, 116],
    [251, 234, 119],
    [251, 236, 123],
    [251, 237, 127],
    [251, 239, 130],
    [251, 241, 134],
    [251, 243, 138],
    [251, 244, 142],
    [252, 246, 145],
    [252, 248, 149],
    [252, 250, 153],
    [252, 251, 157],
    [252, 253, 160],
    [252, 255, 164],
];

pub fn colormap_index(v: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Precondition(format!(
            "heatmap value {v} outside [0, 1]"
        )));
    }
    Ok((v * 255.0).round() as usize)
}

/// Binary PPM of `map` (row-major, `height x width`) through [`COLORMAP`].
pub fn heatmap_ppm(map: &[f64], height: usize, width: usize) -> Result<Vec<u8>> {
    if map.len() != height * width || map.is_empty() {
        return Err(Error::dim(
            "map",
            format!("{} values for a {height}x{width} heatmap", map.len()),
        ));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for &v in map {
        out.extend_from_slice(&COLORMAP[colormap_index(v)?]);
    }
    Ok(out)
}

pub fn emit_heatmap(map: &[f64], height: usize, width: usize, path: &Path) -> Result<()> {
    let bytes = heatmap_ppm(map, height, width)?;
    netpbm::save(path, &bytes)
}

/// Side-by-side panel: image, heatmap, and ground truth in grey when given.
pub fn panel_ppm(image: &Tensor, map: &[f64], mask: Option<&[bool]>) -> Result<Vec<u8>> {
    let (c, h, w) = image.chw()?;
    if c != 3 || map.len() != h * w {
        return Err(Error::dim(
            "map",
            format!("panel needs a 3-channel image and {} map values", h * w),
        ));
    }
    let tiles = if mask.is_some() { 3 } else { 2 };
    let mut out = format!("P6\n{} {h}\n255\n", w * tiles).into_bytes();
    let px = image.values();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = px[ch * h * w + y * w + x];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Precondition(format!(
                        "image value {v} outside [0, 1]"
                    )));
                }
                out.push((v * 255.0).round() as u8);
            }
        }
        for x in 0..w {
            out.extend_from_slice(&COLORMAP[colormap_index(map[y * w + x])?]);
        }
        if let Some(m) = mask {
            for x in 0..w {
                let g = if m[y * w + x] { 255 } else { 0 };
                out.extend_from_slice(&[g, g, g]);
            }
        }
    }
    Ok(out)
}
