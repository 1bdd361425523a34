static PRESETS: &[Preset] = &[
    p(L128, 4096, 17, 2, 2),
    p(L128, 8192, 18, 2, 2),
    p(L128, 8192, 18, 3, 4),
    p(L128, 8192, 18, 4, 5),
    p(L128, 8192, 40, 3, 1),
    p(L128, 8192, 40, 4, 2),
    p(L128, 8192, 60, 4, 1),
    p(L128, 16384, 40, 3, 1),
    p(L128, 16384, 40, 4, 2),
    p(L128, 16384, 40, 5, 3),
    p(L128, 16384, 40, 6, 5),
    p(L128, 16384, 40, 7, 6),
    p(L128, 16384, 40, 8, 6),
    p(L128, 16384, 60, 4, 1),
    p(L128, 16384, 60, 5, 2),
    p(L128, 16384, 60, 6, 3),
    p(L128, 16384, 60, 7, 3),
    p(L128, 16384, 60, 8, 4),
    p(L128, 32768, 40, 3, 1),
    p(L128, 32768, 40, 4, 2),
    p(L128, 32768, 40, 5, 3),
    p(L128, 32768, 40, 6, 5),
    p(L128, 32768, 40, 7, 6),
    p(L128, 32768, 40, 8, 7),
    p(L128, 32768, 40, 9, 8),
    p(L128, 32768, 40, 10, 9),
    p(L128, 32768, 40, 11, 10),
    p(L128, 32768, 40, 12, 11),
    p(L128, 32768, 40, 13, 12),
    p(L128, 32768, 40, 14, 13),
    p(L128, 32768, 40, 15, 14),
    p(L128, 32768, 60, 4, 1),
    p(L128, 32768, 60, 5, 2),
    p(L128, 32768, 60, 6, 3),
    p(L128, 32768, 60, 7, 3),
    p(L128, 32768, 60, 8, 4),
    p(L128, 32768, 60, 9, 5),
    p(L128, 32768, 60, 10, 6),
    p(L128, 32768, 60, 11, 7),
    p(L128, 32768, 60, 12, 7),
    p(L128, 32768, 60, 13, 8),
    p(L128, 32768, 60, 14, 9),
    p(L128, 32768, 60, 15, 10),
    p(L192, 4096, 17, 2, 1),
    p(L192, 8192, 18, 2, 2),
    p(L192, 8192, 18, 3, 3),
    p(L192, 8192, 40, 3, 1),
    p(L192, 16384, 40, 3, 1),
    p(L192, 16384, 40, 4, 2),
    p(L192, 16384, 40, 5, 3),
    p(L192, 16384, 40, 6, 4),
    p(L192, 16384, 60, 4, 1),
    p(L192, 16384, 60, 5, 2),
    p(L192, 16384, 60, 6, 2),
    p(L192, 32768, 40, 3, 1),
    p(L192, 32768, 40, 4, 2),
    p(L192, 32768, 40, 5, 3),
    p(L192, 32768, 40, 6, 5),
    p(L192, 32768, 40, 7, 6),
    p(L192, 32768, 40, 8, 7),
    p(L192, 32768, 40, 9, 8),
    p(L192, 32768, 40, 10, 9),
    p(L192, 32768, 40, 11, 9),
    p(L192, 32768, 60, 4, 1),
    p(L192, 32768, 60, 5, 2),
    p(L192, 32768, 60, 6, 3),
    p(L192, 32768, 60, 7, 3),
    p(L192, 32768, 60, 8, 4),
    p(L192, 32768, 60, 9, 5),
    p(L192, 32768, 60, 10, 6),
    p(L192, 32768, 60, 11, 6),
    p(L256, 8192, 18, 2, 2),
    p(L256, 16384, 40, 3, 1),
    p(L256, 16384, 40, 4, 2),
    p(L256, 16384, 60, 4, 1),
    p(L256, 32768, 40, 3, 1),
    p(L256, 32768, 40, 4, 2),
    p(L256, 32768, 40, 5, 3),
    p(L256, 32768, 40, 6, 5),
    p(L256, 32768, 40, 7, 6),
    p(L256, 32768, 40, 8, 7),
    p(L256, 32768, 60, 4, 1),
    p(L256, 32768, 60, 5, 2),
    p(L256, 32768, 60, 6, 3),
    p(L256, 32768, 60, 7, 3),
    p(L256, 32768, 60, 8, 4),
];
