//! 10x10 glyph bitmaps. `#` is lit.

pub(super) const A: [&str; 10] = [
    "....##....",
    "...####...",
    "..##..##..",
    "..##..##..",
    ".##....##.",
    ".########.",
    ".########.",
    "##......##",
    "##......##",
    "##......##",
];

pub(super) const B: [&str; 10] = [
    "#######...",
    "##....##..",
    "##....##..",
    "##....##..",
    "#######...",
    "##.....##.",
    "##......##",
    "##......##",
    "##.....##.",
    "########..",
];
