/* 8-point one-dimensional integer DCT over consecutive input blocks.
 * Coefficients are cos(pi*(2n+1)*k/16) scaled by 125 (88 = 125/sqrt(2)
 * for the flat row). */
#define NBLK 4

void dct8(const signed char x[8 * NBLK], int y[8 * NBLK]) {
  const signed char coef[8][8] = {
    { 88, 88, 88, 88, 88, 88, 88, 88 },
    { 123, 104, 69, 24, -24, -69, -104, -123 },
    { 115, 48, -48, -115, -115, -48, 48, 115 },
    { 104, -24, -123, -69, 69, 123, 24, -104 },
    { 88, -88, -88, 88, 88, -88, -88, 88 },
    { 69, -123, 24, 104, -104, -24, 123, -69 },
    { 48, -115, 115, -48, -48, 115, -115, 48 },
    { 24, -69, 104, -123, 123, -104, 69, -24 }
  };
  int b;
  int k;
  int n;
  for (b = 0; b < NBLK; b = b + 1) {
    for (k = 0; k < 8; k = k + 1) {
      int s = 0;
      for (n = 0; n < 8; n = n + 1) {
        s = s + coef[k][n] * x[8 * b + n];
      }
      y[8 * b + k] = s;
    }
  }
}
