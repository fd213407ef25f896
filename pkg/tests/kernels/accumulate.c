/* Running sum of a byte stream; the total leaves through a pointer. */
#define N 16

void accumulate(const unsigned char A[N], int *total) {
  int sum = 0;
  int i;
  for (i = 0; i < N; i = i + 1) {
    sum = sum + A[i];
  }
  *total = sum;
}
