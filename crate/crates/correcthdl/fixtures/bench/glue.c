unsigned char scale(unsigned char x);
unsigned char accum(unsigned char a);
unsigned char clip(unsigned char c);

unsigned char pipeline_top(unsigned char x) {
    return clip(accum(scale(x)));
}
