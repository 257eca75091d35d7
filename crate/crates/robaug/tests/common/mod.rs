//! Shared fixtures for the integration suites.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use robaug::dataset::{
    load_dataset, save_dataset, save_roboseg, AnnotatedFrame, DemoDataset, Episode, Frame,
    Metadata,
};
use robaug::mask::{BinaryMask, Rect};

/// One annotated frame. The robot main and aux rectangles tile one
/// filled rectangle, so a perfect prediction scores GIoU exactly 1.0.
pub fn annotated(name: &str, salt: u8) -> AnnotatedFrame {
    let image = Frame::from_fn(24, 20, |x, y| {
        [
            salt.wrapping_add(x as u8).wrapping_mul(31),
            salt.wrapping_add(y as u8).wrapping_mul(17),
            salt ^ (x as u8).wrapping_add((y as u8) << 3),
        ]
    });
    AnnotatedFrame {
        name: name.to_string(),
        image,
        robot_main: BinaryMask::from_rect(24, 20, Rect { x0: 2, y0: 2, x1: 9, y1: 12 }),
        robot_aux: BinaryMask::from_rect(24, 20, Rect { x0: 2, y0: 12, x1: 9, y1: 16 }),
        object: BinaryMask::from_rect(24, 20, Rect { x0: 14, y0: 6, x1: 20, y1: 11 }),
        instruction: "pick up the block".to_string(),
        descriptions: vec!["a lab bench".to_string(), "a cluttered desk".to_string()],
    }
}

pub fn annotated_set(n: usize) -> Vec<AnnotatedFrame> {
    (0..n)
        .map(|i| annotated(&format!("frame{i:02}"), 23 + i as u8 * 13))
        .collect()
}

/// Write a dataset of `frames_per_episode`-sized episodes drawn from
/// `ann` and reload it so episodes are disk-backed.
pub fn write_dataset(dir: &Path, ann: &[AnnotatedFrame], frames_per_episode: usize) -> DemoDataset {
    let mut episodes = Vec::new();
    for (i, chunk) in ann.chunks(frames_per_episode).enumerate() {
        let frames: Vec<Frame> = chunk.iter().map(|a| a.image.clone()).collect();
        let meta = Metadata::new("pick up the block", vec!["block".to_string()]);
        episodes.push(Episode::new(format!("ep{i:03}"), frames, meta).unwrap());
    }
    let ds = DemoDataset::new(episodes).unwrap();
    save_dataset(&ds, dir, false).unwrap();
    load_dataset(dir).unwrap()
}

/// Ground-truth corpus for passthrough backends, keyed by the same
/// images as the dataset fixture.
pub fn write_seg_fixture(dir: &Path, ann: &[AnnotatedFrame]) -> PathBuf {
    save_roboseg(ann, dir).unwrap();
    dir.to_path_buf()
}

pub fn write_prompt_pool(path: &Path) -> PathBuf {
    std::fs::write(
        path,
        "a tidy laboratory bench\na wooden kitchen table\na bright meeting room\na cluttered workshop\n",
    )
    .unwrap();
    path.to_path_buf()
}

pub fn write_asset_pool(dir: &Path) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let palettes: [[u8; 3]; 3] = [[230, 40, 40], [40, 230, 40], [40, 40, 230]];
    for (i, c) in palettes.iter().enumerate() {
        Frame::from_fn(11, 9, |x, y| {
            [
                c[0].wrapping_add((x * 3) as u8),
                c[1].wrapping_add((y * 5) as u8),
                c[2].wrapping_add((x + y) as u8),
            ]
        })
        .save_png(dir.join(format!("asset{i}.png")))
        .unwrap();
    }
    dir.to_path_buf()
}

/// Region-proposal fixture directory: per-frame masks disjoint from
/// the annotated foreground.
pub fn write_proposals_fixture(dir: &Path, ann: &[AnnotatedFrame]) -> PathBuf {
    for a in ann {
        let sub = dir.join(a.image.digest_hex());
        std::fs::create_dir_all(&sub).unwrap();
        let (w, h) = a.image.dims();
        BinaryMask::from_rect(w, h, Rect { x0: 10, y0: 17, x1: 22, y1: 20 })
            .save_png(sub.join("00.png"))
            .unwrap();
        BinaryMask::from_rect(w, h, Rect { x0: 21, y0: 0, x1: 24, y1: 4 })
            .save_png(sub.join("01.png"))
            .unwrap();
    }
    dir.to_path_buf()
}

/// Raw behavior-score table: 6 methods x 4 (task, stage) cells, per
/// scene, grasp out of 3 and finish out of 6.
pub const RAW_SCORE_CSV: &str = "\
method,task,stage,scene,raw_mean,max
no_aug,fold_towel,grasp,student_desk,0.875,3
no_aug,fold_towel,grasp,pink_sheet,1.125,3
no_aug,fold_towel,grasp,meeting_room,1.25,3
no_aug,fold_towel,grasp,scholar_room,1.125,3
no_aug,fold_towel,finish,student_desk,1.625,6
no_aug,fold_towel,finish,pink_sheet,1.625,6
no_aug,fold_towel,finish,meeting_room,1.625,6
no_aug,fold_towel,finish,scholar_room,2,6
no_aug,put_mouse,grasp,black_boam,0.875,3
no_aug,put_mouse,grasp,white_sheet,0,3
no_aug,put_mouse,finish,black_boam,0.875,6
no_aug,put_mouse,finish,white_sheet,0,6
inpainting,fold_towel,grasp,student_desk,0.625,3
inpainting,fold_towel,grasp,pink_sheet,1.625,3
inpainting,fold_towel,grasp,meeting_room,0.875,3
inpainting,fold_towel,grasp,scholar_room,1.25,3
inpainting,fold_towel,finish,student_desk,1.375,6
inpainting,fold_towel,finish,pink_sheet,3,6
inpainting,fold_towel,finish,meeting_room,1.75,6
inpainting,fold_towel,finish,scholar_room,2.125,6
inpainting,put_mouse,grasp,black_boam,1.25,3
inpainting,put_mouse,grasp,white_sheet,0,3
inpainting,put_mouse,finish,black_boam,1.25,6
inpainting,put_mouse,finish,white_sheet,0,6
background,fold_towel,grasp,student_desk,1.875,3
background,fold_towel,grasp,pink_sheet,1.25,3
background,fold_towel,grasp,meeting_room,1.5,3
background,fold_towel,grasp,scholar_room,1.375,3
background,fold_towel,finish,student_desk,4.125,6
background,fold_towel,finish,pink_sheet,2.875,6
background,fold_towel,finish,meeting_room,3,6
background,fold_towel,finish,scholar_room,2.875,6
background,put_mouse,grasp,black_boam,1.625,3
background,put_mouse,grasp,white_sheet,1.125,3
background,put_mouse,finish,black_boam,2.375,6
background,put_mouse,finish,white_sheet,1.5,6
imagenet,fold_towel,grasp,student_desk,1.75,3
imagenet,fold_towel,grasp,pink_sheet,1.5,3
imagenet,fold_towel,grasp,meeting_room,1.25,3
imagenet,fold_towel,grasp,scholar_room,1.5,3
imagenet,fold_towel,finish,student_desk,3.75,6
imagenet,fold_towel,finish,pink_sheet,2.75,6
imagenet,fold_towel,finish,meeting_room,2.875,6
imagenet,fold_towel,finish,scholar_room,3.125,6
imagenet,put_mouse,grasp,black_boam,1,3
imagenet,put_mouse,grasp,white_sheet,2.375,3
imagenet,put_mouse,finish,black_boam,1.25,6
imagenet,put_mouse,finish,white_sheet,3.375,6
texture,fold_towel,grasp,student_desk,1.875,3
texture,fold_towel,grasp,pink_sheet,1.5,3
texture,fold_towel,grasp,meeting_room,1.5,3
texture,fold_towel,grasp,scholar_room,1.125,3
texture,fold_towel,finish,student_desk,4.125,6
texture,fold_towel,finish,pink_sheet,3.5,6
texture,fold_towel,finish,meeting_room,3,6
texture,fold_towel,finish,scholar_room,2.25,6
texture,put_mouse,grasp,black_boam,1.375,3
texture,put_mouse,grasp,white_sheet,2.375,3
texture,put_mouse,finish,black_boam,2.125,6
texture,put_mouse,finish,white_sheet,3.125,6
engine,fold_towel,grasp,student_desk,2,3
engine,fold_towel,grasp,pink_sheet,1.75,3
engine,fold_towel,grasp,meeting_room,1.5,3
engine,fold_towel,grasp,scholar_room,1.5,3
engine,fold_towel,finish,student_desk,4.5,6
engine,fold_towel,finish,pink_sheet,3.25,6
engine,fold_towel,finish,meeting_room,3.125,6
engine,fold_towel,finish,scholar_room,3.375,6
engine,put_mouse,grasp,black_boam,2.5,3
engine,put_mouse,grasp,white_sheet,2.25,3
engine,put_mouse,finish,black_boam,3.875,6
engine,put_mouse,finish,white_sheet,3.125,6
";

/// Published normalized scores the raw table must reproduce, in the
/// cell order (fold_towel grasp, fold_towel finish, put_mouse grasp,
/// put_mouse finish), plus the max-weighted average. `None` marks the
/// one reference cell that is inconsistent with its own raw data and
/// is excluded from comparison.
pub const PUBLISHED_SCORES: [(&str, [Option<f64>; 4], f64); 6] = [
    ("no_aug", [Some(0.36), Some(0.29), Some(0.15), Some(0.07)], 0.20),
    ("inpainting", [Some(0.36), Some(0.34), None, Some(0.10)], 0.24),
    ("background", [Some(0.50), Some(0.54), Some(0.46), Some(0.32)], 0.45),
    ("imagenet", [Some(0.50), Some(0.52), Some(0.56), Some(0.39)], 0.48),
    ("texture", [Some(0.50), Some(0.54), Some(0.63), Some(0.44)], 0.51),
    ("engine", [Some(0.56), Some(0.59), Some(0.79), Some(0.58)], 0.62),
];

/// (task, stage) column order matching `PUBLISHED_SCORES`.
pub const SCORE_CELL_ORDER: [(&str, &str); 4] = [
    ("fold_towel", "grasp"),
    ("fold_towel", "finish"),
    ("put_mouse", "grasp"),
    ("put_mouse", "finish"),
];
