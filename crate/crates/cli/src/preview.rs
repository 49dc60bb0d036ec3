use matforge::image::Image;

const GAP: usize = 2;
const BACKGROUND: f32 = 0.25;

/// Lays out rows of images as `cell × cell` tiles on a dark background.
pub fn contact_sheet(rows: &[Vec<Image>], cell: usize) -> Image {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let width = cols * (cell + GAP) + GAP;
    let height = rows.len().max(1) * (cell + GAP) + GAP;
    let mut sheet = Image::filled(width, height, 3, BACKGROUND);
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            let tile = img.resample(cell);
            let (ox, oy) = (GAP + c * (cell + GAP), GAP + r * (cell + GAP));
            for y in 0..cell {
                for x in 0..cell {
                    let src = tile.pixel(x, y);
                    let dst = sheet.pixel_mut(ox + x, oy + y);
                    for k in 0..3 {
                        dst[k] = src[k.min(tile.channels - 1)];
                    }
                }
            }
        }
    }
    sheet
}
