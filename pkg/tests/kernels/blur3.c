/* 3x3 box blur (divide by 8 keeps the arithmetic in shifts). */
#define H 6
#define W 8

void blur3(const unsigned char img[H][W], unsigned char out[H - 2][W - 2]) {
  int r;
  int c;
  for (r = 0; r < H - 2; r = r + 1) {
    for (c = 0; c < W - 2; c = c + 1) {
      out[r][c] = (img[r][c] + img[r][c+1] + img[r][c+2]
                 + img[r+1][c] + img[r+1][c+1] + img[r+1][c+2]
                 + img[r+2][c] + img[r+2][c+1] + img[r+2][c+2]) / 8;
    }
  }
}
