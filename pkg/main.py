"""
Conforming Limit Discontinuity Toolkit
Entry point for the command-line interface
"""
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

if __name__ == "__main__":
    from app.main import main
    main()
