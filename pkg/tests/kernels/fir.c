/* 5-tap constant-coefficient FIR over a sliding window of the input. */
#define N 17

void fir(const unsigned char A[N + 4], short C[N]) {
  int i;
  for (i = 0; i < N; i = i + 1) {
    C[i] = 3*A[i] + 5*A[i+1] + 7*A[i+2] + 9*A[i+3] - A[i+4];
  }
}
